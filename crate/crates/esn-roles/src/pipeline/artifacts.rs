//! Artifact files: naming, serialization, digests and the run manifest.
//!
//! JSON artifacts round every number to 12 significant digits before
//! writing; CSV score tables use the same precision inline. Rounding
//! happens at serialization only, never inside computations.

use super::PipelineError;
use crate::factor::ScoreMatrix;
use crate::graph::ReplyGraph;
use crate::ids::UserId;
use crate::numfmt::{fmt_sig, round_json};
use crate::pipeline::PipelineConfig;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const METRICS_CSV: &str = "metrics.csv";
pub const FACTOR_REPORT_JSON: &str = "factor_report.json";
pub const FACTOR_SCORES_CSV: &str = "factor_scores.csv";
pub const ROLES_JSON: &str = "roles.json";
pub const ROLES_CSV: &str = "roles.csv";
pub const REPLY_GRAPH_CSV: &str = "reply_graph.csv";
pub const RUN_MANIFEST_JSON: &str = "run_manifest.json";
/// Dropped into the output directory when a write fails partway, removed
/// again by the next successful run.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Content hash and size of one file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileDigest {
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        use std::fmt::Write;
        write!(hex, "{b:02x}").expect("writing to a String cannot fail");
    }
    hex
}

pub fn digest_of(bytes: &[u8]) -> FileDigest {
    FileDigest {
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

/// Serializes any report as pretty JSON with numbers at 12 significant
/// digits and a trailing newline.
pub fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, PipelineError> {
    let render = || -> Result<Vec<u8>, serde_json::Error> {
        let mut v = serde_json::to_value(value)?;
        round_json(&mut v, 12);
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s.into_bytes())
    };
    render().map_err(|e| PipelineError::numerical(super::Stage::Output, format!("cannot serialize report: {e}")))
}

pub fn factor_column_names(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("factor_{i}")).collect()
}

/// `user_id` plus one column per factor, 12 significant digits.
pub fn write_factor_scores_csv(scores: &ScoreMatrix) -> String {
    let m = scores.values.ncols();
    let mut out = String::from("user_id");
    for name in factor_column_names(m) {
        out.push(',');
        out.push_str(&name);
    }
    out.push('\n');
    for (row, user) in scores.users.iter().enumerate() {
        out.push_str(user.as_str());
        for col in 0..m {
            out.push(',');
            out.push_str(&fmt_sig(scores.values[(row, col)], 12));
        }
        out.push('\n');
    }
    out
}

/// Parses the table written by [`write_factor_scores_csv`]. Column names
/// beyond `user_id` are free; only the shape matters.
pub fn parse_factor_scores_csv(text: &str) -> Result<ScoreMatrix, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.get(0) != Some("user_id") {
        return Err(format!(
            "score table must start with a user_id column, found {:?}",
            headers.get(0)
        ));
    }
    let m = headers.len().saturating_sub(1);
    if m == 0 {
        return Err("score table has no score columns".into());
    }
    let mut users = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != m + 1 {
            return Err(format!(
                "row {} has {} fields, expected {}",
                i + 2,
                record.len(),
                m + 1
            ));
        }
        users.push(UserId::from(record.get(0).unwrap_or_default()));
        let row: Result<Vec<f64>, String> = (1..=m)
            .map(|c| {
                record
                    .get(c)
                    .unwrap_or_default()
                    .parse::<f64>()
                    .map_err(|e| format!("row {}: {e}", i + 2))
            })
            .collect();
        rows.push(row?);
    }
    if users.is_empty() {
        return Err("score table has no rows".into());
    }
    let values = DMatrix::from_fn(users.len(), m, |r, c| rows[r][c]);
    Ok(ScoreMatrix { users, values })
}

/// `user_id,cluster` plus the score the clustering ran on, per dimension.
pub fn write_roles_csv(users: &[UserId], labels: &[usize], scores: &DMatrix<f64>) -> String {
    let m = scores.ncols();
    let mut out = String::from("user_id,cluster");
    for name in factor_column_names(m) {
        out.push(',');
        out.push_str(&name);
    }
    out.push('\n');
    for (row, user) in users.iter().enumerate() {
        out.push_str(user.as_str());
        out.push(',');
        out.push_str(&labels[row].to_string());
        for col in 0..m {
            out.push(',');
            out.push_str(&fmt_sig(scores[(row, col)], 12));
        }
        out.push('\n');
    }
    out
}

/// Edge list in `source,target,weight` form, sorted by endpoints.
pub fn write_edges_csv(graph: &ReplyGraph) -> String {
    let nodes = graph.nodes();
    let mut edges: Vec<(&str, &str, u64)> = Vec::with_capacity(graph.edge_count());
    for (i, source) in nodes.iter().enumerate() {
        for &(j, weight) in graph.out_neighbors(i) {
            edges.push((source.as_str(), nodes[j].as_str(), weight));
        }
    }
    edges.sort_unstable();
    let mut out = String::from("source,target,weight\n");
    for (s, t, w) in edges {
        out.push_str(s);
        out.push(',');
        out.push_str(t);
        out.push(',');
        out.push_str(&w.to_string());
        out.push('\n');
    }
    out
}

/// One candidate cluster count from the silhouette search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: usize,
    pub silhouette: f64,
}

/// The cluster-stage report artifact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolesReport {
    pub k: usize,
    pub seed: u64,
    pub wcss: f64,
    pub silhouette: Option<f64>,
    /// Mean silhouette per tried count when k was searched, absent when it
    /// was fixed.
    pub selection: Option<Vec<KCandidate>>,
    pub standardized: bool,
    pub score_columns: Vec<String>,
    pub labels: BTreeMap<UserId, usize>,
    #[serde(with = "crate::factor::serde_matrix")]
    pub centroids: DMatrix<f64>,
    pub rules: Vec<crate::cluster::RoleRule>,
}

/// Identifies the build that produced a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
    pub report_format: u32,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            report_format: 1,
        }
    }
}

/// Reproduction record written next to every artifact set: the amended
/// configuration, input digests and digests of everything written in this
/// run. Worker-count settings are runtime-only and deliberately absent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: ToolInfo,
    pub command: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, FileDigest>,
    pub artifacts: BTreeMap<String, FileDigest>,
    pub summary: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &PipelineConfig,
        inputs: BTreeMap<String, FileDigest>,
        files: &[(String, Vec<u8>)],
        summary: BTreeMap<String, u64>,
    ) -> Self {
        let artifacts = files
            .iter()
            .map(|(name, bytes)| (name.clone(), digest_of(bytes)))
            .collect();
        Self {
            tool: ToolInfo::default(),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            inputs,
            artifacts,
            summary,
        }
    }
}

/// Writes every artifact into `out_dir`. A failed write leaves an
/// `INCOMPLETE` marker naming the failure; a fully successful write
/// removes any marker from an earlier broken run.
pub fn write_artifacts(out_dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), PipelineError> {
    let fail = |message: String| PipelineError::data(super::Stage::Output, message);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| fail(format!("cannot create {}: {e}", out_dir.display())))?;
    let marker = out_dir.join(INCOMPLETE_MARKER);
    for (name, bytes) in files {
        if let Err(e) = std::fs::write(out_dir.join(name), bytes) {
            let note = format!("write of {name} failed: {e}\n");
            let _ = std::fs::write(&marker, note);
            return Err(fail(format!("cannot write {name}: {e}")));
        }
    }
    if marker.exists() {
        let _ = std::fs::remove_file(&marker);
    }
    Ok(())
}
