//! Command-line entry point: one subcommand per analysis stage plus a
//! synthetic-corpus generator. Exit codes: 0 success, 2 configuration
//! error, 3 data error, 4 numerical failure.

use clap::{Args, Parser, Subcommand};
use esn_roles::ingest::{parse_timestamp, EligibilityMode, StudyWindow};
use esn_roles::pipeline::{
    artifacts, run_cluster_file, run_factor_file, run_metrics, run_pipeline, validate_inputs,
    PipelineConfig, PipelineError, RunReport, Stage, WindowConfig,
};
use esn_roles::synth::{default_archetypes, generate, ArchetypeSpec, SynthError};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "esn-roles",
    version,
    about = "Behavioural metrics, factor analysis and role clustering for enterprise social network logs"
)]
struct Cli {
    /// Cap the worker-thread pool. Results never depend on this.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check inputs and print a JSON health report; writes nothing.
    Validate(RunArgs),
    /// Compute the per-user metric table from raw logs.
    Metrics(RunArgs),
    /// Factor a metric table into latent dimensions and score users.
    Factor(FactorArgs),
    /// Cluster a score table into roles.
    Cluster(ClusterArgs),
    /// Run every stage end to end.
    Pipeline(RunArgs),
    /// Generate a seeded synthetic corpus with planted archetypes.
    Synth(SynthArgs),
}

/// Flags shared by the raw-log commands. Every flag overrides the matching
/// config-file field.
#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Message log CSV.
    #[arg(long)]
    messages: Option<PathBuf>,
    /// User roster CSV.
    #[arg(long)]
    users: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized stages.
    #[arg(long)]
    seed: Option<u64>,
    /// Study window start, RFC 3339.
    #[arg(long, value_name = "TIME")]
    window_start: Option<String>,
    /// Study window end (exclusive), RFC 3339.
    #[arg(long, value_name = "TIME")]
    window_end: Option<String>,
    /// Eligibility mode: total or per_month.
    #[arg(long, value_name = "MODE")]
    eligibility: Option<String>,
    /// Minimum in-window messages under the total mode.
    #[arg(long)]
    min_messages: Option<u64>,
    /// Fixed cluster count.
    #[arg(long, conflicts_with = "k_range")]
    k: Option<usize>,
    /// Inclusive cluster-count search range, as a..b.
    #[arg(long, value_name = "A..B")]
    k_range: Option<String>,
    /// Communality floor for the second extraction pass.
    #[arg(long)]
    communality_floor: Option<f64>,
    /// Oblimin mixing parameter.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
}

#[derive(Args)]
struct FactorArgs {
    /// TOML configuration file; flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metric table produced by the metrics command.
    #[arg(long, value_name = "CSV")]
    metrics: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Communality floor for the second extraction pass.
    #[arg(long)]
    communality_floor: Option<f64>,
    /// Oblimin mixing parameter.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    /// TOML configuration file; flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Score table produced by the factor command.
    #[arg(long, value_name = "CSV")]
    scores: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for restart initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed cluster count.
    #[arg(long, conflicts_with = "k_range")]
    k: Option<usize>,
    /// Inclusive cluster-count search range, as a..b.
    #[arg(long, value_name = "A..B")]
    k_range: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for messages.csv, users.csv and ground_truth.csv.
    #[arg(long)]
    out: PathBuf,
    /// Number of users to simulate.
    #[arg(long, default_value_t = 2000)]
    users: usize,
    /// Window length in calendar months.
    #[arg(long, default_value_t = 12)]
    months: u32,
    /// Window start, RFC 3339.
    #[arg(long, default_value = "2024-01-01T00:00:00Z", value_name = "TIME")]
    start: String,
    /// Generator seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// TOML file with [[archetype]] tables; built-in archetypes when absent.
    #[arg(long, value_name = "TOML")]
    archetypes: Option<PathBuf>,
}

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig, PipelineError> {
    match path {
        Some(path) => PipelineConfig::from_file(path),
        None => Ok(PipelineConfig::default()),
    }
}

fn parse_k_range(text: &str) -> Result<(usize, usize), PipelineError> {
    let parsed = text.split_once("..").and_then(|(a, b)| {
        let b = b.strip_prefix('=').unwrap_or(b);
        Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?))
    });
    parsed.ok_or_else(|| config_err(format!("cannot parse --k-range {text:?}; expected a..b")))
}

fn apply_window_flags(
    config: &mut PipelineConfig,
    start: &Option<String>,
    end: &Option<String>,
) -> Result<(), PipelineError> {
    if start.is_none() && end.is_none() {
        return Ok(());
    }
    let mut window = config.window.clone().unwrap_or(WindowConfig {
        start: String::new(),
        end: String::new(),
    });
    if let Some(s) = start {
        window.start = s.clone();
    }
    if let Some(e) = end {
        window.end = e.clone();
    }
    if window.start.is_empty() || window.end.is_empty() {
        return Err(config_err(
            "both --window-start and --window-end are needed when the config file has no [window]",
        ));
    }
    config.window = Some(window);
    Ok(())
}

fn build_run_config(args: &RunArgs) -> Result<PipelineConfig, PipelineError> {
    let mut config = load_config(&args.config)?;
    if let Some(path) = &args.messages {
        config.messages = Some(path.clone());
    }
    if let Some(path) = &args.users {
        config.users = Some(path.clone());
    }
    if let Some(path) = &args.out {
        config.out_dir = path.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    apply_window_flags(&mut config, &args.window_start, &args.window_end)?;
    if let Some(mode) = &args.eligibility {
        config.eligibility.mode = match mode.as_str() {
            "total" => EligibilityMode::Total,
            "per_month" => EligibilityMode::PerMonth,
            other => {
                return Err(config_err(format!(
                    "unknown eligibility mode {other:?}; use total or per_month"
                )))
            }
        };
    }
    if let Some(min) = args.min_messages {
        config.eligibility.min_messages = min;
    }
    if let Some(k) = args.k {
        config.cluster.k = Some(k);
    }
    if let Some(range) = &args.k_range {
        let (k_min, k_max) = parse_k_range(range)?;
        config.cluster.k = None;
        config.cluster.k_min = k_min;
        config.cluster.k_max = k_max;
    }
    if let Some(floor) = args.communality_floor {
        config.factor.communality_floor = floor;
    }
    if let Some(delta) = args.delta {
        config.factor.rotation.delta = delta;
    }
    Ok(config)
}

fn print_report(report: &RunReport) {
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!("wrote to {}:", report.out_dir.display());
    for name in &report.artifacts {
        println!("  {name}");
    }
    if !report.summary.is_empty() {
        println!("summary:");
        for (key, value) in &report.summary {
            println!("  {key} = {value}");
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchetypeFile {
    archetype: Vec<ArchetypeSpec>,
}

fn synth_error(e: SynthError) -> PipelineError {
    config_err(e.to_string())
}

fn run_synth(args: &SynthArgs) -> Result<(), PipelineError> {
    let start = parse_timestamp(&args.start)
        .ok_or_else(|| config_err(format!("cannot parse --start {:?}", args.start)))?;
    if args.months == 0 {
        return Err(config_err("--months must be at least 1"));
    }
    let end = start + chrono::Months::new(args.months);
    let window = StudyWindow::new(start, end)
        .map_err(|e| config_err(format!("invalid synthetic window: {e}")))?;
    let specs = match &args.archetypes {
        None => default_archetypes(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                config_err(format!("cannot read archetypes file {}: {e}", path.display()))
            })?;
            let file: ArchetypeFile = toml::from_str(&text).map_err(|e| {
                config_err(format!("cannot parse archetypes file {}: {e}", path.display()))
            })?;
            file.archetype
        }
    };
    let corpus = generate(&specs, args.users, &window, args.seed).map_err(synth_error)?;
    corpus.write_to_dir(&args.out).map_err(|e| {
        PipelineError::Stage {
            stage: Stage::Output,
            class: esn_roles::pipeline::ErrorClass::Data,
            message: format!("cannot write corpus to {}: {e}", args.out.display()),
        }
    })?;
    println!("wrote to {}:", args.out.display());
    for name in ["messages.csv", "users.csv", "ground_truth.csv"] {
        println!("  {name}");
    }
    println!("summary:");
    println!("  messages = {}", corpus.messages.len());
    println!("  users = {}", corpus.users.len());
    Ok(())
}

fn dispatch(command: &Command) -> Result<(), PipelineError> {
    match command {
        Command::Validate(args) => {
            let resolved = build_run_config(args)?.resolve()?;
            let report = validate_inputs(&resolved)?;
            let json = artifacts::json_pretty(&report)?;
            print!("{}", String::from_utf8_lossy(&json));
            Ok(())
        }
        Command::Metrics(args) => {
            let resolved = build_run_config(args)?.resolve()?;
            print_report(&run_metrics(&resolved)?);
            Ok(())
        }
        Command::Pipeline(args) => {
            let resolved = build_run_config(args)?.resolve()?;
            print_report(&run_pipeline(&resolved)?);
            Ok(())
        }
        Command::Factor(args) => {
            let mut config = load_config(&args.config)?;
            if let Some(path) = &args.out {
                config.out_dir = path.clone();
            }
            if let Some(floor) = args.communality_floor {
                config.factor.communality_floor = floor;
            }
            if let Some(delta) = args.delta {
                config.factor.rotation.delta = delta;
            }
            print_report(&run_factor_file(&args.metrics, &config)?);
            Ok(())
        }
        Command::Cluster(args) => {
            let mut config = load_config(&args.config)?;
            if let Some(path) = &args.out {
                config.out_dir = path.clone();
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(k) = args.k {
                config.cluster.k = Some(k);
            }
            if let Some(range) = &args.k_range {
                let (k_min, k_max) = parse_k_range(range)?;
                config.cluster.k = None;
                config.cluster.k_min = k_min;
                config.cluster.k_max = k_max;
            }
            print_report(&run_cluster_file(&args.scores, &config)?);
            Ok(())
        }
        Command::Synth(args) => run_synth(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = dispatch(&cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
