//! Command-line front end: simulate episode batches and post-process the
//! resulting trace files into metric reports, scaling curves, and ratio
//! bucket tables.
//!
//! Exit codes are part of the contract: 0 success, 2 unusable run config,
//! 3 policy or transport failure, 4 unusable trace data, 5 not enough data
//! for the requested bucket count. Output-side IO failures exit 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coscale_core::config::{config_hash, ConfigError, RunConfig};
use coscale_core::engine::{run_batch, BatchManifest, EngineError};
use coscale_core::jsonl::{read_traces_from_path, traces_to_string};
use coscale_core::metrics::{
    bucketed_performance, buckets_to_csv, curve_to_csv, scaling_curve, scatter_to_csv,
    EpisodeData, MetricsError, MetricsReport, ScatterRow,
};
use coscale_core::trace::{effort_summary, EffortSummary, Trace};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_POLICY: u8 = 3;
const EXIT_TRACES: u8 = 4;
const EXIT_INSUFFICIENT: u8 = 5;

#[derive(Parser)]
#[command(
    name = "coscale",
    version,
    about = "Run human-agent collaboration episodes and score the traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode per task and write traces.jsonl + manifest.json.
    Simulate {
        /// Run config TOML.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a trace file into a metrics report JSON.
    Metrics {
        /// traces.jsonl from a simulate run.
        #[arg(long)]
        traces: PathBuf,
        /// No-progress patience for the usability-drop metric.
        #[arg(long, default_value_t = 1)]
        tau: usize,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the collaboration scaling curve (mean performance by round).
    Curve {
        #[arg(long)]
        traces: PathBuf,
        /// Curve CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bucket episodes by agent-to-user token ratio; writes buckets.csv and
    /// scatter.csv into the output directory.
    Buckets {
        #[arg(long)]
        traces: PathBuf,
        /// Bucket count.
        #[arg(long, default_value_t = 4)]
        buckets: usize,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Metrics { traces, tau, out } => metrics(&traces, tau, &out),
        Command::Curve { traces, out } => curve(&traces, &out),
        Command::Buckets { traces, buckets, out } => bucket_table(&traces, buckets, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, err: impl std::fmt::Display) -> Self {
        Self { code, message: err.to_string() }
    }
}

fn config_failure(err: ConfigError) -> Failure {
    Failure::new(EXIT_CONFIG, err)
}

fn engine_failure(err: EngineError) -> Failure {
    let code = match &err {
        EngineError::Trace { .. } => EXIT_TRACES,
        EngineError::Policy { .. } | EngineError::Pool { .. } | EngineError::Metrics(_) => {
            EXIT_POLICY
        }
    };
    Failure::new(code, err)
}

fn metrics_failure(err: MetricsError) -> Failure {
    let code = match &err {
        MetricsError::InsufficientData { .. } => EXIT_INSUFFICIENT,
        _ => EXIT_TRACES,
    };
    Failure::new(code, err)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::new(EXIT_IO, format!("could not write {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path)
        .map_err(|e| Failure::new(EXIT_IO, format!("could not create {}: {e}", path.display())))
}

fn load_episode_data(traces_path: &Path) -> Result<(Vec<Trace>, Vec<EpisodeData>), Failure> {
    let traces =
        read_traces_from_path(traces_path).map_err(|e| Failure::new(EXIT_TRACES, e))?;
    let data = traces.iter().map(EpisodeData::from_trace).collect();
    Ok((traces, data))
}

fn simulate(config_path: &Path, out_dir: &Path) -> Result<(), Failure> {
    let raw = std::fs::read_to_string(config_path).map_err(|e| {
        Failure::new(EXIT_CONFIG, format!("could not read {}: {e}", config_path.display()))
    })?;
    let config = RunConfig::from_toml(&raw).map_err(config_failure)?;
    config.check_policies().map_err(|e| Failure::new(EXIT_POLICY, e))?;
    let catalog = config.load_catalog().map_err(config_failure)?;
    let tasks = config.load_tasks(&catalog).map_err(config_failure)?;

    let episode_config = config.episode_config();
    let output = run_batch(
        &tasks,
        &catalog,
        &episode_config,
        config.episode.tau,
        config.jobs,
        |_| config.build_policies(),
    )
    .map_err(engine_failure)?;

    let manifest = BatchManifest::new(
        config_hash(&raw),
        config.manifest_seed(),
        &episode_config,
        config.episode.tau,
        &tasks,
        &output,
    );

    ensure_dir(out_dir)?;
    let traces: Vec<Trace> = output.episodes.iter().map(|e| e.trace.clone()).collect();
    let jsonl = traces_to_string(&traces).map_err(|e| Failure::new(EXIT_TRACES, e))?;
    write_file(&out_dir.join("traces.jsonl"), &jsonl)?;
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Failure::new(EXIT_IO, e))?;
    write_file(&out_dir.join("manifest.json"), &format!("{manifest_json}\n"))?;
    println!(
        "simulated {} episodes ({} excluded) -> {}",
        output.episodes.len(),
        output.excluded.len(),
        out_dir.display()
    );
    Ok(())
}

/// Schema of the metrics report file: the aggregate report plus the
/// per-episode effort split the aggregates were computed from.
#[derive(serde::Serialize)]
struct MetricsFile {
    report: MetricsReport,
    episodes: Vec<EpisodeEffort>,
}

#[derive(serde::Serialize)]
struct EpisodeEffort {
    task_id: String,
    effort: EffortSummary,
}

fn metrics(traces_path: &Path, tau: usize, out_path: &Path) -> Result<(), Failure> {
    let (traces, data) = load_episode_data(traces_path)?;
    let report = MetricsReport::compute(&data, tau).map_err(metrics_failure)?;
    let episodes = traces
        .iter()
        .map(|t| EpisodeEffort { task_id: t.task_id.clone(), effort: effort_summary(t) })
        .collect();
    let file = MetricsFile { report, episodes };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Failure::new(EXIT_IO, e))?;
    write_file(out_path, &format!("{json}\n"))?;
    println!("scored {} episodes -> {}", traces.len(), out_path.display());
    Ok(())
}

fn curve(traces_path: &Path, out_path: &Path) -> Result<(), Failure> {
    let (_, data) = load_episode_data(traces_path)?;
    let curve = scaling_curve(&data).map_err(metrics_failure)?;
    write_file(out_path, &curve_to_csv(&curve))?;
    println!("curve over {} episodes -> {}", data.len(), out_path.display());
    Ok(())
}

fn bucket_table(traces_path: &Path, buckets: usize, out_dir: &Path) -> Result<(), Failure> {
    let (traces, data) = load_episode_data(traces_path)?;
    let table = bucketed_performance(&data, buckets).map_err(metrics_failure)?;
    ensure_dir(out_dir)?;
    write_file(&out_dir.join("buckets.csv"), &buckets_to_csv(&table))?;
    let rows: Vec<ScatterRow> = traces.iter().map(ScatterRow::from_trace).collect();
    write_file(&out_dir.join("scatter.csv"), &scatter_to_csv(&rows))?;
    println!("{} buckets over {} episodes -> {}", buckets, data.len(), out_dir.display());
    Ok(())
}
