//! End-to-end orchestration: ingest, graph, metrics, factoring and
//! clustering behind one configuration, with artifact files and a
//! reproduction manifest at the end.
//!
//! Stages run strictly in sequence and any failure aborts the run with an
//! error naming the stage. Artifacts are assembled in memory and written
//! in one final step, so a failed run never leaves half-written output:
//! either every file lands or an `INCOMPLETE` marker names what broke.
//!
//! Worker-thread count is a runtime setting, not configuration: results
//! are identical for any pool size and the manifest never records it.

pub mod artifacts;
mod config;

pub use artifacts::{
    parse_factor_scores_csv, write_factor_scores_csv, FileDigest, KCandidate, RolesReport,
    RunManifest, ToolInfo,
};
pub use config::{
    ClusterConfig, EligibilityConfig, GraphConfig, PipelineConfig, ResolvedConfig, WindowConfig,
};

use crate::cluster::{derive_rules, kmeans, select_k, ClusterError, Clustering, RoleRule};
use crate::factor::{analyze, factor_scores, metric_dataset, FactorAnalysis, FactorError, ScoreMatrix};
use crate::graph::{centrality_table, CentralityTable, ReplyGraph};
use crate::ids::UserId;
use crate::ingest::{
    build_threads, eligible_users, filter_public, filter_window, parse_messages, parse_users,
    Message, RowRejection, ThreadIndex, UserRecord,
};
use crate::metrics::{compute_metric_matrix, MetricId, MetricMatrix};
use artifacts::{digest_of, json_pretty, write_artifacts, write_edges_csv, write_roles_csv};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Pipeline stages as named in error messages and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Graph,
    Metrics,
    Factor,
    Cluster,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Metrics => "metrics",
            Stage::Factor => "factor",
            Stage::Cluster => "cluster",
            Stage::Output => "output",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Failure families, each with its own process exit code: configuration
/// problems exit 2, broken or insufficient data 3, numerical failures 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {message}")]
    Stage {
        stage: Stage,
        class: ErrorClass,
        message: String,
    },
}

impl PipelineError {
    pub(crate) fn data(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError::Stage {
            stage,
            class: ErrorClass::Data,
            message: message.into(),
        }
    }

    pub(crate) fn numerical(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError::Stage {
            stage,
            class: ErrorClass::Numerical,
            message: message.into(),
        }
    }

    fn factor(e: FactorError) -> Self {
        let class = match e {
            FactorError::TooFewCases { .. }
            | FactorError::Shape { .. }
            | FactorError::ZeroVariance { .. }
            | FactorError::AllZeroVariance
            | FactorError::TooFewVariables { .. } => ErrorClass::Data,
            FactorError::SingularCorrelation
            | FactorError::NothingRetained
            | FactorError::Heywood { .. } => ErrorClass::Numerical,
        };
        PipelineError::Stage {
            stage: Stage::Factor,
            class,
            message: e.to_string(),
        }
    }

    fn cluster(e: ClusterError) -> Self {
        let class = match e {
            ClusterError::TooFewUsers { .. } => ErrorClass::Data,
            ClusterError::DegenerateScores => ErrorClass::Numerical,
            ClusterError::BadRange { .. } => ErrorClass::Config,
        };
        PipelineError::Stage {
            stage: Stage::Cluster,
            class,
            message: e.to_string(),
        }
    }

    /// 2 for configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { class, .. } => match class {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }
}

/// Row counts and the first rejections for one parsed table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableCheck {
    pub rows_parsed: usize,
    pub rows_rejected: usize,
    /// At most the first 25 rejections, each with line number and reason.
    pub rejections: Vec<RowRejection>,
}

const MAX_LISTED_REJECTIONS: usize = 25;

fn check_of(parsed: usize, rejections: &[RowRejection]) -> TableCheck {
    TableCheck {
        rows_parsed: parsed,
        rows_rejected: rejections.len(),
        rejections: rejections
            .iter()
            .take(MAX_LISTED_REJECTIONS)
            .cloned()
            .collect(),
    }
}

struct Loaded {
    messages_check: TableCheck,
    users_check: TableCheck,
    flags_derived: bool,
    roster: Vec<UserRecord>,
    public_count: usize,
    windowed: Vec<Message>,
    inputs: BTreeMap<String, FileDigest>,
}

fn load_and_filter(resolved: &ResolvedConfig) -> Result<Loaded, PipelineError> {
    let read = |path: &Path| -> Result<Vec<u8>, PipelineError> {
        std::fs::read(path)
            .map_err(|e| PipelineError::data(Stage::Ingest, format!("cannot read {}: {e}", path.display())))
    };
    let message_bytes = read(&resolved.messages_path)?;
    let user_bytes = read(&resolved.users_path)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("messages".to_string(), digest_of(&message_bytes));
    inputs.insert("users".to_string(), digest_of(&user_bytes));
    if let Some(path) = &resolved.config.keywords {
        inputs.insert("keywords".to_string(), digest_of(&read(path)?));
    }

    let log = parse_messages(&message_bytes[..], &resolved.config.columns, &resolved.keywords)
        .map_err(|e| PipelineError::data(Stage::Ingest, e.to_string()))?;
    let roster = parse_users(&user_bytes[..])
        .map_err(|e| PipelineError::data(Stage::Ingest, e.to_string()))?;

    let messages_check = check_of(log.messages.len(), &log.rejections);
    let users_check = check_of(roster.users.len(), &roster.rejections);
    let public = filter_public(log.messages);
    let public_count = public.len();
    let windowed = filter_window(public, &resolved.window);
    Ok(Loaded {
        messages_check,
        users_check,
        flags_derived: log.flags_derived,
        roster: roster.users,
        public_count,
        windowed,
        inputs,
    })
}

/// Everything up to and including the metric matrix.
pub struct FrontHalf {
    pub messages_check: TableCheck,
    pub users_check: TableCheck,
    pub windowed_messages: usize,
    pub threads: ThreadIndex,
    pub graph: ReplyGraph,
    pub centrality: CentralityTable,
    pub eligible: BTreeSet<UserId>,
    pub matrix: MetricMatrix,
    pub inputs: BTreeMap<String, FileDigest>,
}

/// Runs ingest, thread reconstruction, the reply graph and the metric
/// matrix. Shared by the full pipeline and the metrics-only command.
pub fn ingest_and_measure(resolved: &ResolvedConfig) -> Result<FrontHalf, PipelineError> {
    let loaded = load_and_filter(resolved)?;
    let eligibility = &resolved.config.eligibility;
    let eligible = eligible_users(
        &loaded.windowed,
        &loaded.roster,
        &resolved.window,
        eligibility.mode,
        eligibility.min_messages,
    )
    .map_err(|e| PipelineError::data(Stage::Ingest, e.to_string()))?;
    if eligible.is_empty() {
        return Err(PipelineError::data(
            Stage::Ingest,
            "eligibility selected no users; lower eligibility.min_messages or widen the window",
        ));
    }
    let threads = build_threads(&loaded.windowed);
    let graph = ReplyGraph::from_messages(&loaded.windowed, &threads);
    let centrality = centrality_table(&graph, resolved.config.graph.include_closeness);
    let matrix = compute_metric_matrix(
        &loaded.windowed,
        &threads,
        &centrality,
        &eligible,
        resolved.config.metrics,
    )
    .map_err(|e| PipelineError::data(Stage::Metrics, e.to_string()))?;
    Ok(FrontHalf {
        messages_check: loaded.messages_check,
        users_check: loaded.users_check,
        windowed_messages: loaded.windowed.len(),
        threads,
        graph,
        centrality,
        eligible,
        matrix,
        inputs: loaded.inputs,
    })
}

/// The factor stage: two-pass extraction, rotation and regression scores.
pub struct FactorStage {
    pub analysis: FactorAnalysis,
    pub scores: ScoreMatrix,
}

pub fn run_factor_stage(
    matrix: &MetricMatrix,
    options: &crate::factor::AnalysisOptions,
) -> Result<FactorStage, PipelineError> {
    let data = metric_dataset(matrix);
    let analysis = analyze(&data, options).map_err(PipelineError::factor)?;
    let scores = factor_scores(matrix, &analysis.final_pass().correlation, &analysis.rotation)
        .map_err(PipelineError::factor)?;
    Ok(FactorStage { analysis, scores })
}

/// The cluster stage: optional count search, the final fit and its rules.
pub struct ClusterStage {
    pub clustering: Clustering,
    pub rules: Vec<RoleRule>,
    pub selection: Option<Vec<(usize, f64)>>,
}

pub fn run_cluster_stage(
    users: &[UserId],
    scores: &nalgebra::DMatrix<f64>,
    config: &ClusterConfig,
    seed: u64,
) -> Result<ClusterStage, PipelineError> {
    let options = config.options();
    let (k, selection) = match config.k {
        Some(k) => (k, None),
        None => {
            let (best, table) = select_k(scores, config.k_min, config.k_max, seed, &options)
                .map_err(PipelineError::cluster)?;
            (best, Some(table))
        }
    };
    let clustering = kmeans(scores, k, seed, &options).map_err(PipelineError::cluster)?;
    let rules = derive_rules(&clustering, scores, users);
    Ok(ClusterStage {
        clustering,
        rules,
        selection,
    })
}

/// What a command wrote and the headline counts, for terminal display.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
    pub summary: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

fn roles_report(
    users: &[UserId],
    stage: &ClusterStage,
    seed: u64,
    standardized: bool,
) -> RolesReport {
    RolesReport {
        k: stage.clustering.k,
        seed,
        wcss: stage.clustering.wcss,
        silhouette: stage.clustering.silhouette,
        selection: stage.selection.as_ref().map(|table| {
            table
                .iter()
                .map(|&(k, silhouette)| KCandidate { k, silhouette })
                .collect()
        }),
        standardized,
        score_columns: artifacts::factor_column_names(stage.clustering.centroids.ncols()),
        labels: users
            .iter()
            .cloned()
            .zip(stage.clustering.labels.iter().copied())
            .collect(),
        centroids: stage.clustering.centroids.clone(),
        rules: stage.rules.clone(),
    }
}

fn finish(
    command: &str,
    config: &PipelineConfig,
    inputs: BTreeMap<String, FileDigest>,
    mut files: Vec<(String, Vec<u8>)>,
    summary: BTreeMap<String, u64>,
    warnings: Vec<String>,
) -> Result<RunReport, PipelineError> {
    let manifest = RunManifest::new(command, config, inputs, &files, summary.clone());
    files.push((artifacts::RUN_MANIFEST_JSON.to_string(), json_pretty(&manifest)?));
    write_artifacts(&config.out_dir, &files)?;
    Ok(RunReport {
        out_dir: config.out_dir.clone(),
        artifacts: files.into_iter().map(|(name, _)| name).collect(),
        summary,
        warnings,
    })
}

fn front_summary(front: &FrontHalf) -> BTreeMap<String, u64> {
    let mut summary = BTreeMap::new();
    summary.insert("messages_parsed".into(), front.messages_check.rows_parsed as u64);
    summary.insert("messages_rejected".into(), front.messages_check.rows_rejected as u64);
    summary.insert("users_parsed".into(), front.users_check.rows_parsed as u64);
    summary.insert("users_rejected".into(), front.users_check.rows_rejected as u64);
    summary.insert("in_window_messages".into(), front.windowed_messages as u64);
    summary.insert("eligible_users".into(), front.eligible.len() as u64);
    summary
}

/// Ingest through clustering, writing the complete artifact set.
pub fn run_pipeline(resolved: &ResolvedConfig) -> Result<RunReport, PipelineError> {
    let config = &resolved.config;
    let front = ingest_and_measure(resolved)?;
    let factor = run_factor_stage(&front.matrix, &config.factor)?;
    let cluster = run_cluster_stage(
        &factor.scores.users,
        &factor.scores.values,
        &config.cluster,
        config.seed,
    )?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push((artifacts::METRICS_CSV.into(), front.matrix.to_csv().into_bytes()));
    files.push((artifacts::FACTOR_REPORT_JSON.into(), json_pretty(&factor.analysis)?));
    files.push((
        artifacts::FACTOR_SCORES_CSV.into(),
        write_factor_scores_csv(&factor.scores).into_bytes(),
    ));
    let roles = roles_report(
        &factor.scores.users,
        &cluster,
        config.seed,
        config.cluster.standardize,
    );
    files.push((artifacts::ROLES_JSON.into(), json_pretty(&roles)?));
    files.push((
        artifacts::ROLES_CSV.into(),
        write_roles_csv(
            &factor.scores.users,
            &cluster.clustering.labels,
            &factor.scores.values,
        )
        .into_bytes(),
    ));
    if config.graph.export_edges {
        files.push((
            artifacts::REPLY_GRAPH_CSV.into(),
            write_edges_csv(&front.graph).into_bytes(),
        ));
    }

    let mut summary = front_summary(&front);
    let model = &factor.analysis.final_pass().model;
    summary.insert("retained_factors".into(), model.retained as u64);
    summary.insert(
        "excluded_variables".into(),
        factor.analysis.excluded_low_communality.len() as u64,
    );
    summary.insert("k".into(), cluster.clustering.k as u64);
    let warnings = factor.analysis.warnings.clone();
    finish("pipeline", config, front.inputs, files, summary, warnings)
}

/// Ingest and metric computation only; writes `metrics.csv` and, when
/// configured, the reply-graph edge list.
pub fn run_metrics(resolved: &ResolvedConfig) -> Result<RunReport, PipelineError> {
    let config = &resolved.config;
    let front = ingest_and_measure(resolved)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push((artifacts::METRICS_CSV.into(), front.matrix.to_csv().into_bytes()));
    if config.graph.export_edges {
        files.push((
            artifacts::REPLY_GRAPH_CSV.into(),
            write_edges_csv(&front.graph).into_bytes(),
        ));
    }
    let summary = front_summary(&front);
    finish("metrics", config, front.inputs, files, summary, Vec::new())
}

/// Factor stage over a prepared metric table; writes the factor report
/// and the per-user score table.
pub fn run_factor_file(
    metrics_path: &Path,
    config: &PipelineConfig,
) -> Result<RunReport, PipelineError> {
    config.validate_settings()?;
    let bytes = std::fs::read(metrics_path).map_err(|e| {
        PipelineError::data(
            Stage::Factor,
            format!("cannot read {}: {e}", metrics_path.display()),
        )
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| PipelineError::data(Stage::Factor, format!("metrics table is not UTF-8: {e}")))?;
    let matrix = MetricMatrix::from_csv(&text)
        .map_err(|e| PipelineError::data(Stage::Factor, format!("bad metrics table: {e}")))?;
    let stage = run_factor_stage(&matrix, &config.factor)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("metrics".to_string(), digest_of(&bytes));
    let files = vec![
        (artifacts::FACTOR_REPORT_JSON.to_string(), json_pretty(&stage.analysis)?),
        (
            artifacts::FACTOR_SCORES_CSV.to_string(),
            write_factor_scores_csv(&stage.scores).into_bytes(),
        ),
    ];
    let mut summary = BTreeMap::new();
    summary.insert("rows".into(), matrix.users.len() as u64);
    summary.insert(
        "retained_factors".into(),
        stage.analysis.final_pass().model.retained as u64,
    );
    summary.insert(
        "excluded_variables".into(),
        stage.analysis.excluded_low_communality.len() as u64,
    );
    let warnings = stage.analysis.warnings.clone();
    finish("factor", config, inputs, files, summary, warnings)
}

/// Cluster stage over a prepared score table; writes the role report and
/// the per-user role assignments.
pub fn run_cluster_file(
    scores_path: &Path,
    config: &PipelineConfig,
) -> Result<RunReport, PipelineError> {
    config.validate_settings()?;
    let bytes = std::fs::read(scores_path).map_err(|e| {
        PipelineError::data(
            Stage::Cluster,
            format!("cannot read {}: {e}", scores_path.display()),
        )
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| PipelineError::data(Stage::Cluster, format!("score table is not UTF-8: {e}")))?;
    let scores = parse_factor_scores_csv(&text)
        .map_err(|e| PipelineError::data(Stage::Cluster, format!("bad score table: {e}")))?;
    let stage = run_cluster_stage(&scores.users, &scores.values, &config.cluster, config.seed)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("factor_scores".to_string(), digest_of(&bytes));
    let roles = roles_report(&scores.users, &stage, config.seed, config.cluster.standardize);
    let files = vec![
        (artifacts::ROLES_JSON.to_string(), json_pretty(&roles)?),
        (
            artifacts::ROLES_CSV.to_string(),
            write_roles_csv(&scores.users, &stage.clustering.labels, &scores.values).into_bytes(),
        ),
    ];
    let mut summary = BTreeMap::new();
    summary.insert("rows".into(), scores.users.len() as u64);
    summary.insert("k".into(), stage.clustering.k as u64);
    finish("cluster", config, inputs, files, summary, Vec::new())
}

/// Input health report: row rejections, filter effects, an eligibility
/// preview and metric columns that never vary. Read-only by design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub messages: TableCheck,
    pub users: TableCheck,
    /// True when content flags came from keyword classification of message
    /// bodies rather than precomputed flag columns.
    pub flags_derived: bool,
    pub public_messages: usize,
    pub in_window_messages: usize,
    pub full_months: usize,
    pub eligible_users: usize,
    pub zero_variance_metrics: Vec<String>,
    pub warnings: Vec<String>,
}

/// Checks inputs against the configuration without writing anything.
/// Unreadable or unparseable files are hard errors; everything softer
/// lands in the report.
pub fn validate_inputs(resolved: &ResolvedConfig) -> Result<ValidationReport, PipelineError> {
    let loaded = load_and_filter(resolved)?;
    let mut warnings = Vec::new();
    let eligibility = &resolved.config.eligibility;
    let eligible = match eligible_users(
        &loaded.windowed,
        &loaded.roster,
        &resolved.window,
        eligibility.mode,
        eligibility.min_messages,
    ) {
        Ok(set) => set,
        Err(e) => {
            warnings.push(e.to_string());
            BTreeSet::new()
        }
    };
    if eligible.is_empty() {
        warnings.push("no users pass the eligibility filter".to_string());
    }

    let mut zero_variance = Vec::new();
    if !eligible.is_empty() {
        let threads = build_threads(&loaded.windowed);
        let graph = ReplyGraph::from_messages(&loaded.windowed, &threads);
        let centrality = centrality_table(&graph, false);
        match compute_metric_matrix(
            &loaded.windowed,
            &threads,
            &centrality,
            &eligible,
            resolved.config.metrics,
        ) {
            Ok(matrix) => {
                let n = matrix.values.nrows();
                for (j, id) in MetricId::ALL.iter().enumerate() {
                    let first = matrix.values[(0, j)];
                    if (0..n).all(|i| matrix.values[(i, j)] == first) {
                        zero_variance.push(id.label().to_string());
                    }
                }
                let repairs = &threads.repairs;
                if !repairs.orphans.is_empty() {
                    warnings.push(format!(
                        "{} replies have no reachable initial message and sit outside every thread",
                        repairs.orphans.len()
                    ));
                }
                if !repairs.reattached.is_empty() {
                    warnings.push(format!(
                        "{} replies had dangling targets and were reattached to their thread's initial",
                        repairs.reattached.len()
                    ));
                }
            }
            Err(e) => warnings.push(format!("metric preview failed: {e}")),
        }
    }

    Ok(ValidationReport {
        messages: loaded.messages_check,
        users: loaded.users_check,
        flags_derived: loaded.flags_derived,
        public_messages: loaded.public_count,
        in_window_messages: loaded.windowed.len(),
        full_months: resolved.window.full_months().len(),
        eligible_users: eligible.len(),
        zero_variance_metrics: zero_variance,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::StudyWindow;
    use crate::synth::{default_archetypes, generate};
    use chrono::{TimeZone, Utc};
    use std::path::Path;

    fn window_strings() -> (String, String) {
        ("2024-01-01T00:00:00Z".into(), "2024-04-01T00:00:00Z".into())
    }

    fn study_window() -> StudyWindow {
        StudyWindow::new(
            Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2024, 4, 1, 0, 0, 0).unwrap(),
        )
        .unwrap()
    }

    fn corpus_in(dir: &Path) -> PipelineConfig {
        let corpus = generate(&default_archetypes(), 200, &study_window(), 9).unwrap();
        corpus.write_to_dir(dir).unwrap();
        let (start, end) = window_strings();
        let mut config = PipelineConfig::default();
        config.messages = Some(dir.join("messages.csv"));
        config.users = Some(dir.join("users.csv"));
        config.out_dir = dir.join("out");
        config.window = Some(WindowConfig { start, end });
        config
    }

    fn read_all_artifacts(report: &RunReport) -> BTreeMap<String, Vec<u8>> {
        report
            .artifacts
            .iter()
            .map(|name| {
                (
                    name.clone(),
                    std::fs::read(report.out_dir.join(name)).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn pipeline_writes_every_artifact_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let config = corpus_in(dir.path());
        let resolved = config.resolve().unwrap();

        let report = run_pipeline(&resolved).unwrap();
        for name in [
            "metrics.csv",
            "factor_report.json",
            "factor_scores.csv",
            "roles.json",
            "roles.csv",
            "run_manifest.json",
        ] {
            assert!(report.artifacts.iter().any(|a| a == name), "missing {name}");
        }
        let first = read_all_artifacts(&report);

        // The factor report parses back into the analysis type and the
        // manifest digests match the files on disk.
        let analysis: FactorAnalysis =
            serde_json::from_slice(&first["factor_report.json"]).unwrap();
        assert!(analysis.final_pass().model.retained >= 1);
        let manifest: RunManifest =
            serde_json::from_slice(&first["run_manifest.json"]).unwrap();
        assert_eq!(manifest.command, "pipeline");
        for (name, digest) in &manifest.artifacts {
            assert_eq!(digest, &artifacts::digest_of(&first[name]), "digest of {name}");
        }
        assert_eq!(manifest.inputs.len(), 2);

        let rerun = run_pipeline(&resolved).unwrap();
        assert_eq!(first, read_all_artifacts(&rerun), "rerun changed artifact bytes");
    }

    #[test]
    fn missing_users_file_names_the_ingest_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = corpus_in(dir.path());
        config.users = Some(dir.path().join("absent.csv"));
        let resolved = config.resolve().unwrap();
        let err = run_pipeline(&resolved).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("ingest stage"), "{err}");
    }

    #[test]
    fn validation_report_counts_match_an_independent_recount() {
        let dir = tempfile::tempdir().unwrap();
        let config = corpus_in(dir.path());
        let resolved = config.resolve().unwrap();
        let report = validate_inputs(&resolved).unwrap();

        assert_eq!(report.messages.rows_rejected, 0);
        assert_eq!(report.users.rows_rejected, 0);
        assert!(!report.flags_derived);
        assert_eq!(report.full_months, 3);
        assert_eq!(report.public_messages, report.messages.rows_parsed);

        // Recount eligibility straight off the CSV: authors with at least
        // 12 in-window rows (every synth user spans the whole window).
        let text = std::fs::read_to_string(dir.path().join("messages.csv")).unwrap();
        let mut per_author: BTreeMap<String, u64> = BTreeMap::new();
        for line in text.lines().skip(1) {
            let author = line.split(',').nth(1).unwrap();
            *per_author.entry(author.to_string()).or_insert(0) += 1;
        }
        let expected = per_author.values().filter(|&&n| n >= 12).count();
        assert_eq!(report.eligible_users, expected);
        assert!(report.eligible_users > 0);
    }

    #[test]
    fn malformed_row_is_listed_with_line_and_reason() {
        let dir = tempfile::tempdir().unwrap();
        let config = corpus_in(dir.path());
        let path = dir.path().join("messages.csv");
        let mut text = std::fs::read_to_string(&path).unwrap();
        // Corrupt the timestamp of the first data row (line 2).
        let first_data = text.lines().nth(1).unwrap().to_string();
        let broken = {
            let mut fields: Vec<&str> = first_data.split(',').collect();
            fields[2] = "not-a-time";
            fields.join(",")
        };
        text = text.replacen(&first_data, &broken, 1);
        std::fs::write(&path, text).unwrap();

        let resolved = config.resolve().unwrap();
        let report = validate_inputs(&resolved).unwrap();
        assert_eq!(report.messages.rows_rejected, 1);
        assert_eq!(report.messages.rejections[0].line, 2);
        assert!(report.messages.rejections[0].reason.contains("timestamp"));
    }

    #[test]
    fn staged_commands_chain_through_their_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = corpus_in(dir.path());
        config.graph.export_edges = true;
        let resolved = config.resolve().unwrap();

        let metrics_report = run_metrics(&resolved).unwrap();
        assert!(metrics_report.artifacts.iter().any(|a| a == "reply_graph.csv"));
        let out = &config.out_dir;
        let edges = std::fs::read_to_string(out.join("reply_graph.csv")).unwrap();
        assert!(edges.starts_with("source,target,weight\n"));
        assert!(edges.lines().count() > 1);

        let factor_report = run_factor_file(&out.join("metrics.csv"), &config).unwrap();
        assert!(factor_report.artifacts.iter().any(|a| a == "factor_scores.csv"));

        let cluster_report = run_cluster_file(&out.join("factor_scores.csv"), &config).unwrap();
        assert!(cluster_report.artifacts.iter().any(|a| a == "roles.json"));
        let roles: RolesReport =
            serde_json::from_slice(&std::fs::read(out.join("roles.json")).unwrap()).unwrap();
        assert_eq!(roles.labels.len(), metrics_report.summary["eligible_users"] as usize);
        let roles_csv = std::fs::read_to_string(out.join("roles.csv")).unwrap();
        assert_eq!(roles_csv.lines().count() - 1, roles.labels.len());
    }

    #[test]
    fn empty_eligibility_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = corpus_in(dir.path());
        config.eligibility.min_messages = 100_000;
        let resolved = config.resolve().unwrap();
        let err = run_pipeline(&resolved).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("eligibility"), "{err}");
    }
}
