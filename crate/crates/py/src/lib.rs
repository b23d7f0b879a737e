//! Python bindings over the simulation core. Scalar and list arguments
//! cross the boundary natively; structured inputs and outputs travel as
//! JSON or JSONL strings with the same schemas the CLI reads and writes,
//! so Python-side tooling and shell-side tooling stay interchangeable.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use coscale_core::engine::{self, EpisodeConfig, PolicySet};
use coscale_core::env::{self, Catalog};
use coscale_core::jsonl;
use coscale_core::metrics::{self, EpisodeData, MetricsReport};
use coscale_core::policy::{
    AgentMode, AgentPolicy, CollabMode, ScriptedAutoAgent, ScriptedCollabAgent, ScriptedRater,
    ScriptedUser,
};
use coscale_core::trace::{self, ActionKind, ActionRecord, ActorId};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Minimal stand-in records so list-level callers can reuse the trace
/// segmentation without building full traces.
fn sentinel_actions(is_human: &[bool]) -> Vec<ActionRecord> {
    is_human
        .iter()
        .enumerate()
        .map(|(i, &human)| ActionRecord {
            step: i as u64 + 1,
            actor: if human { ActorId::Human } else { ActorId::Agent },
            kind: ActionKind::TaskAction,
            content: "x".into(),
            tokens_generated: 1,
            context_tokens: 0,
            output_updated: false,
        })
        .collect()
}

fn episodes_from(series: Vec<Vec<f64>>) -> Vec<EpisodeData> {
    series
        .into_iter()
        .enumerate()
        .map(|(i, performance)| EpisodeData {
            task_id: format!("episode-{i}"),
            progress: vec![false; performance.len()],
            performance,
            first_update: None,
            agent_to_user_ratio: None,
        })
        .collect()
}

fn load_episodes(traces_jsonl: &str) -> PyResult<Vec<EpisodeData>> {
    let traces = jsonl::read_traces(traces_jsonl.as_bytes()).map_err(value_err)?;
    Ok(traces.iter().map(EpisodeData::from_trace).collect())
}

/// Round boundaries as 1-based (start_step, end_step) pairs: a new round
/// opens at the start and at every agent-to-human handover.
#[pyfunction]
fn segment_rounds(is_human: Vec<bool>) -> PyResult<Vec<(u64, u64)>> {
    let rounds = trace::segment_rounds(&sentinel_actions(&is_human)).map_err(value_err)?;
    Ok(rounds.iter().map(|r| (r.start_step, r.end_step)).collect())
}

/// Fills rounds without an output update with the previous round's score;
/// a leading gap becomes 0.0.
#[pyfunction]
fn prefill_performance(raw: Vec<Option<f64>>) -> PyResult<Vec<f64>> {
    Ok(trace::prefill_performance(&raw).map_err(value_err)?.into_vec())
}

/// Mean over episodes of the best score reached in any round.
#[pyfunction]
fn overall_utility(series: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::overall_utility(&episodes_from(series)).map_err(value_err)
}

/// (absolute, relative) gain of the per-episode best over the score at the
/// first output update; `first_updates[i]` is 1-based into `series[i]`.
#[pyfunction]
fn refinement_gain(series: Vec<Vec<f64>>, first_updates: Vec<usize>) -> PyResult<(f64, f64)> {
    if series.len() != first_updates.len() {
        return Err(value_err("series and first_updates must have equal length"));
    }
    let mut episodes = episodes_from(series);
    for (ep, first) in episodes.iter_mut().zip(first_updates) {
        ep.first_update = Some(first);
    }
    let gain = metrics::refinement_gain(&episodes).map_err(value_err)?;
    Ok((gain.abs, gain.rel))
}

/// (absolute, relative) score change if each episode had ended after tau
/// consecutive no-progress rounds instead of running to the final round.
#[pyfunction]
fn usability_drop(
    series: Vec<Vec<f64>>,
    progress: Vec<Vec<bool>>,
    tau: usize,
) -> PyResult<(f64, f64)> {
    if series.len() != progress.len() {
        return Err(value_err("series and progress must have equal length"));
    }
    let mut episodes = episodes_from(series);
    for (ep, flags) in episodes.iter_mut().zip(progress) {
        ep.progress = flags;
    }
    let drop = metrics::usability_drop(&episodes, tau).map_err(value_err)?;
    Ok((drop.abs, drop.rel))
}

/// 1-based round where a user with patience tau walks away: the final round
/// of the first run of tau + 1 consecutive no-progress rounds, else the last
/// round.
#[pyfunction]
fn counterfactual_stop_round(progress: Vec<bool>, tau: usize) -> usize {
    metrics::counterfactual_stop_round(&progress, tau)
}

/// (means, counts) of performance per round index; episodes shorter than
/// the longest carry their final score forward.
#[pyfunction]
fn scaling_curve(series: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let curve = metrics::scaling_curve(&episodes_from(series)).map_err(value_err)?;
    Ok((curve.means, curve.counts))
}

/// Full metrics report for a JSONL trace file's content, as a JSON string.
#[pyfunction]
#[pyo3(signature = (traces_jsonl, tau = 1))]
fn metrics_report(traces_jsonl: &str, tau: usize) -> PyResult<String> {
    let report = MetricsReport::compute(&load_episodes(traces_jsonl)?, tau).map_err(value_err)?;
    serde_json::to_string_pretty(&report).map_err(value_err)
}

/// Per-episode token accounting for a JSONL trace file's content, as a JSON
/// array of {task_id, effort} objects.
#[pyfunction]
fn effort_summaries(traces_jsonl: &str) -> PyResult<String> {
    let traces = jsonl::read_traces(traces_jsonl.as_bytes()).map_err(value_err)?;
    let rows: Vec<serde_json::Value> = traces
        .iter()
        .map(|t| {
            serde_json::json!({
                "task_id": t.task_id,
                "effort": trace::effort_summary(t),
            })
        })
        .collect();
    serde_json::to_string_pretty(&rows).map_err(value_err)
}

/// Final performance bucketed by agent-to-user token ratio, as a JSON
/// string; episodes without a defined ratio are counted but not bucketed.
#[pyfunction]
#[pyo3(signature = (traces_jsonl, buckets = 4))]
fn bucket_table(traces_jsonl: &str, buckets: usize) -> PyResult<String> {
    let table =
        metrics::bucketed_performance(&load_episodes(traces_jsonl)?, buckets).map_err(value_err)?;
    serde_json::to_string_pretty(&table).map_err(value_err)
}

/// Deterministic task set against the built-in catalog, as a JSON array.
/// Every task hides at least two constraints behind the dialogue.
#[pyfunction]
fn generate_tasks(seed: u64, count: usize) -> PyResult<String> {
    let tasks = env::generate_task_set(seed, count, Catalog::builtin()).map_err(value_err)?;
    serde_json::to_string_pretty(&tasks).map_err(value_err)
}

fn parse_mode(agent_mode: &str) -> PyResult<AgentMode> {
    match agent_mode {
        "auto" => Ok(AgentMode::Auto),
        "one_stage" => Ok(AgentMode::OneStage),
        "two_stage" => Ok(AgentMode::TwoStage),
        other => Err(value_err(format!(
            "unknown agent mode {other:?}; expected auto, one_stage, or two_stage"
        ))),
    }
}

fn scripted_policies(mode: AgentMode) -> PolicySet {
    let agent: Box<dyn AgentPolicy> = match mode {
        AgentMode::Auto => Box::new(ScriptedAutoAgent::default()),
        AgentMode::OneStage => Box::new(ScriptedCollabAgent::new(CollabMode::OneStage)),
        AgentMode::TwoStage => Box::new(ScriptedCollabAgent::new(CollabMode::TwoStage)),
    };
    PolicySet {
        agent,
        user: Box::new(ScriptedUser::default()),
        rater: Box::new(ScriptedRater::default()),
    }
}

/// Runs every task in `tasks_json` with the scripted policies and returns
/// (traces_jsonl, summary_json) where the summary holds the metrics report
/// and any excluded episodes.
#[pyfunction]
#[pyo3(signature = (tasks_json, agent_mode = "one_stage", max_rounds = 30, tau = 1, jobs = 1))]
fn run_scripted_batch(
    tasks_json: &str,
    agent_mode: &str,
    max_rounds: usize,
    tau: usize,
    jobs: usize,
) -> PyResult<(String, String)> {
    let mode = parse_mode(agent_mode)?;
    let catalog = Catalog::builtin();
    let tasks = env::load_tasks(tasks_json, catalog).map_err(value_err)?;
    let mut cfg = EpisodeConfig::with_mode(mode);
    cfg.max_rounds = max_rounds;
    let batch = engine::run_batch(&tasks, catalog, &cfg, tau, jobs, |_| {
        Ok(scripted_policies(mode))
    })
    .map_err(value_err)?;

    let traces: Vec<_> = batch.episodes.iter().map(|e| e.trace.clone()).collect();
    let traces_jsonl = jsonl::traces_to_string(&traces).map_err(value_err)?;
    let summary = serde_json::json!({
        "report": batch.report,
        "excluded": batch.excluded,
    });
    let summary_json = serde_json::to_string_pretty(&summary).map_err(value_err)?;
    Ok((traces_jsonl, summary_json))
}

/// Parses and validates JSONL trace content, returning the episode count.
#[pyfunction]
fn validate_traces(traces_jsonl: &str) -> PyResult<usize> {
    Ok(jsonl::read_traces(traces_jsonl.as_bytes()).map_err(value_err)?.len())
}

#[pymodule]
fn coscale_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BENCHMARK_TASK_SEED", env::BENCHMARK_TASK_SEED)?;
    m.add("BENCHMARK_TASK_COUNT", env::BENCHMARK_TASK_COUNT)?;
    m.add("PROMPT_ASSET_VERSION", coscale_core::policy::PROMPT_ASSET_VERSION)?;
    m.add_function(wrap_pyfunction!(segment_rounds, m)?)?;
    m.add_function(wrap_pyfunction!(prefill_performance, m)?)?;
    m.add_function(wrap_pyfunction!(overall_utility, m)?)?;
    m.add_function(wrap_pyfunction!(refinement_gain, m)?)?;
    m.add_function(wrap_pyfunction!(usability_drop, m)?)?;
    m.add_function(wrap_pyfunction!(counterfactual_stop_round, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_curve, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_report, m)?)?;
    m.add_function(wrap_pyfunction!(effort_summaries, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_table, m)?)?;
    m.add_function(wrap_pyfunction!(generate_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(run_scripted_batch, m)?)?;
    m.add_function(wrap_pyfunction!(validate_traces, m)?)?;
    Ok(())
}
