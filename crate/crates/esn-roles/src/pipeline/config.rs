//! Run configuration: file format, command-line amendments, validation.
//!
//! A run is described by one TOML document. Every field has a default, so
//! the smallest useful file names just the inputs:
//!
//! ```toml
//! messages = "messages.csv"
//! users = "users.csv"
//! out_dir = "out"
//!
//! [window]
//! start = "2024-01-01T00:00:00Z"
//! end = "2025-01-01T00:00:00Z"
//! ```
//!
//! Command-line flags overwrite single fields after loading; validation
//! happens once, on the amended value.

use super::PipelineError;
use crate::cluster::ClusterOptions;
use crate::factor::AnalysisOptions;
use crate::ingest::{parse_timestamp, ColumnMap, EligibilityMode, KeywordLists, StudyWindow};
use crate::metrics::MetricPolicy;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Window endpoints as written in the config file: RFC 3339, or a bare
/// `YYYY-MM-DDTHH:MM:SS` read as UTC.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub start: String,
    pub end: String,
}

/// Who counts as active enough to profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EligibilityConfig {
    pub mode: EligibilityMode,
    /// Minimum authored public in-window messages under the `total` mode;
    /// ignored by `per_month`.
    pub min_messages: u64,
}

impl Default for EligibilityConfig {
    fn default() -> Self {
        Self {
            mode: EligibilityMode::Total,
            min_messages: 12,
        }
    }
}

/// Cluster-count policy. A fixed `k` wins; otherwise every count in
/// `k_min..=k_max` is tried and the best mean silhouette kept.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub standardize: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: None,
            k_min: 2,
            k_max: 8,
            restarts: 10,
            max_iterations: 300,
            standardize: false,
        }
    }
}

impl ClusterConfig {
    pub fn options(&self) -> ClusterOptions {
        ClusterOptions {
            max_iterations: self.max_iterations,
            restarts: self.restarts,
            standardize: self.standardize,
        }
    }
}

/// Reply-graph stage switches.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Also write the reply graph as a `source,target,weight` CSV artifact.
    pub export_edges: bool,
    /// Compute harmonic closeness next to degrees and betweenness. Purely
    /// informational; no metric column reads it.
    pub include_closeness: bool,
}

/// Everything a run needs. Loaded from TOML, then amended by flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub messages: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub window: Option<WindowConfig>,
    /// Seed for every randomized stage; today that is clustering restarts.
    pub seed: u64,
    /// Path to a TOML file with `question_words`, `thanks` and `praise`
    /// lists; the built-in lists apply when absent.
    pub keywords: Option<PathBuf>,
    pub eligibility: EligibilityConfig,
    pub columns: ColumnMap,
    pub metrics: MetricPolicy,
    pub factor: AnalysisOptions,
    pub cluster: ClusterConfig,
    pub graph: GraphConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            messages: None,
            users: None,
            out_dir: PathBuf::from("out"),
            window: None,
            seed: 42,
            keywords: None,
            eligibility: EligibilityConfig::default(),
            columns: ColumnMap::default(),
            metrics: MetricPolicy::default(),
            factor: AnalysisOptions::default(),
            cluster: ClusterConfig::default(),
            graph: GraphConfig::default(),
        }
    }
}

/// A validated configuration with the window parsed and keyword lists
/// loaded. Input files are opened by the stages themselves, so a missing
/// file surfaces as an ingest-stage error rather than here.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub config: PipelineConfig,
    pub messages_path: PathBuf,
    pub users_path: PathBuf,
    pub window: StudyWindow,
    pub keywords: KeywordLists,
}

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_err(format!("cannot parse config: {e}")))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every numeric setting. Input paths and the window are not
    /// required here; commands that consume prepared tables instead of raw
    /// logs call only this.
    pub fn validate_settings(&self) -> Result<(), PipelineError> {
        if self.eligibility.min_messages == 0 {
            return Err(config_err("eligibility.min_messages must be at least 1"));
        }
        let paf = &self.factor.paf;
        if !(paf.tolerance.is_finite() && paf.tolerance > 0.0) {
            return Err(config_err("factor.paf.tolerance must be a positive number"));
        }
        if paf.max_iterations == 0 {
            return Err(config_err("factor.paf.max_iterations must be at least 1"));
        }
        let rot = &self.factor.rotation;
        if !(rot.tolerance.is_finite() && rot.tolerance > 0.0) {
            return Err(config_err(
                "factor.rotation.tolerance must be a positive number",
            ));
        }
        if rot.max_iterations == 0 {
            return Err(config_err(
                "factor.rotation.max_iterations must be at least 1",
            ));
        }
        if !(rot.delta.is_finite() && rot.delta <= 1.0) {
            return Err(config_err(
                "factor.rotation.delta must be finite and at most 1",
            ));
        }
        let floor = self.factor.communality_floor;
        if !(floor.is_finite() && (0.0..1.0).contains(&floor)) {
            return Err(config_err(
                "factor.communality_floor must lie in [0, 1)",
            ));
        }
        let cl = &self.cluster;
        match cl.k {
            Some(0) => return Err(config_err("cluster.k must be at least 1")),
            Some(_) => {}
            None => {
                if cl.k_min < 2 || cl.k_min > cl.k_max {
                    return Err(config_err(format!(
                        "cluster search range {}..{} is invalid; need 2 <= k_min <= k_max",
                        cl.k_min, cl.k_max
                    )));
                }
            }
        }
        if cl.restarts == 0 {
            return Err(config_err("cluster.restarts must be at least 1"));
        }
        if cl.max_iterations == 0 {
            return Err(config_err("cluster.max_iterations must be at least 1"));
        }
        Ok(())
    }

    /// Full validation for commands that read raw logs: settings plus the
    /// input paths, the window and the keyword lists.
    pub fn resolve(&self) -> Result<ResolvedConfig, PipelineError> {
        self.validate_settings()?;
        let messages_path = self
            .messages
            .clone()
            .ok_or_else(|| config_err("messages path is required; set `messages` or pass --messages"))?;
        let users_path = self
            .users
            .clone()
            .ok_or_else(|| config_err("users path is required; set `users` or pass --users"))?;
        let window = self
            .window
            .as_ref()
            .ok_or_else(|| config_err("study window is required; set [window] or pass --window-start/--window-end"))?;
        let start = parse_timestamp(&window.start)
            .ok_or_else(|| config_err(format!("cannot parse window.start {:?}", window.start)))?;
        let end = parse_timestamp(&window.end)
            .ok_or_else(|| config_err(format!("cannot parse window.end {:?}", window.end)))?;
        let window = StudyWindow::new(start, end)
            .map_err(|e| config_err(format!("invalid study window: {e}")))?;
        let keywords = match &self.keywords {
            None => KeywordLists::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    config_err(format!("cannot read keywords file {}: {e}", path.display()))
                })?;
                let lists: KeywordLists = toml::from_str(&text).map_err(|e| {
                    config_err(format!("cannot parse keywords file {}: {e}", path.display()))
                })?;
                lists
                    .compile()
                    .map_err(|e| config_err(format!("bad keyword lists: {e}")))?;
                lists
            }
        };
        Ok(ResolvedConfig {
            config: self.clone(),
            messages_path,
            users_path,
            window,
            keywords,
        })
    }
}
