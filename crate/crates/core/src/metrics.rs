//! Effort-scaling metrics over sets of episodes.
//!
//! Inputs are per-episode views (performance series, first-update round,
//! progress flags, effort ratio). All aggregates are plain means over
//! episodes, so every metric is invariant under episode reordering:
//!
//! - overall utility: mean of the per-episode best score reached anywhere,
//! - refinement gain: mean improvement from the first output update to the
//!   best score, relative form divided by the mean first-update score,
//! - usability drop: mean difference between the score at a counterfactual
//!   early stop and the final score, relative form divided by the mean final
//!   score. The counterfactual stop is the round completing the first run of
//!   tau + 1 consecutive no-progress rounds, else the final round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{effort_summary, first_update_round, Trace};

/// Per-episode metric inputs, detached from the full trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub task_id: String,
    /// Per-round scores, prefilled, each in [0, 1].
    pub performance: Vec<f64>,
    /// 1-based round of the first output update, if any round updated.
    pub first_update: Option<usize>,
    /// Per-round progress flags, aligned with performance.
    pub progress: Vec<bool>,
    /// Agent-to-user token ratio; None when the user generated no tokens.
    pub agent_to_user_ratio: Option<f64>,
}

impl EpisodeData {
    pub fn from_trace(trace: &Trace) -> Self {
        Self {
            task_id: trace.task_id.clone(),
            performance: trace.performance.to_vec(),
            first_update: first_update_round(&trace.rounds),
            progress: trace.progress.clone(),
            agent_to_user_ratio: effort_summary(trace).agent_to_user_ratio,
        }
    }

    fn final_performance(&self) -> f64 {
        *self.performance.last().expect("validated non-empty")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric needs at least one episode")]
    EmptyInput,
    #[error("episode {task_id} has no output update, so no refinement stage exists")]
    MissingFirstUpdate { task_id: String },
    #[error("episode {task_id} is malformed: {reason}")]
    MalformedEpisode { task_id: String, reason: String },
    #[error("not enough data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

fn check_episodes(episodes: &[EpisodeData]) -> Result<(), MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for e in episodes {
        if e.performance.is_empty() {
            return Err(MetricsError::MalformedEpisode {
                task_id: e.task_id.clone(),
                reason: "empty performance series".into(),
            });
        }
        if e.progress.len() != e.performance.len() {
            return Err(MetricsError::MalformedEpisode {
                task_id: e.task_id.clone(),
                reason: format!(
                    "{} progress flags for {} rounds",
                    e.progress.len(),
                    e.performance.len()
                ),
            });
        }
        if let Some(k) = e.first_update {
            if k < 1 || k > e.performance.len() {
                return Err(MetricsError::MalformedEpisode {
                    task_id: e.task_id.clone(),
                    reason: format!("first update round {k} outside the episode"),
                });
            }
        }
    }
    Ok(())
}

/// Mean over episodes of the best score reached anywhere in the episode.
pub fn overall_utility(episodes: &[EpisodeData]) -> Result<f64, MetricsError> {
    check_episodes(episodes)?;
    let sum: f64 = episodes
        .iter()
        .map(|e| e.performance.iter().copied().fold(f64::MIN, f64::max))
        .sum();
    Ok(sum / episodes.len() as f64)
}

/// Absolute and relative refinement gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementGain {
    pub abs: f64,
    /// abs divided by the mean first-update utility.
    pub rel: f64,
    pub first_update_utility_mean: f64,
}

/// Gain from refining past the first output update. Every episode must have
/// a first-update round.
pub fn refinement_gain(episodes: &[EpisodeData]) -> Result<RefinementGain, MetricsError> {
    check_episodes(episodes)?;
    let mut gain_sum = 0.0;
    let mut first_sum = 0.0;
    for e in episodes {
        let k = e.first_update.ok_or_else(|| MetricsError::MissingFirstUpdate {
            task_id: e.task_id.clone(),
        })?;
        let best = e.performance.iter().copied().fold(f64::MIN, f64::max);
        let at_first = e.performance[k - 1];
        gain_sum += best - at_first;
        first_sum += at_first;
    }
    let n = episodes.len() as f64;
    let abs = gain_sum / n;
    let first_update_utility_mean = first_sum / n;
    Ok(RefinementGain {
        abs,
        rel: abs / first_update_utility_mean,
        first_update_utility_mean,
    })
}

/// Round at which a patience-tau user would stop: the round completing the
/// first run of tau + 1 consecutive no-progress rounds, else the last round.
pub fn counterfactual_stop_round(progress: &[bool], tau: usize) -> usize {
    let mut run = 0usize;
    for (i, &made_progress) in progress.iter().enumerate() {
        if made_progress {
            run = 0;
        } else {
            run += 1;
            if run == tau + 1 {
                return i + 1;
            }
        }
    }
    progress.len()
}

/// Absolute and relative usability drop at patience tau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsabilityDrop {
    pub abs: f64,
    /// abs divided by the mean final-round utility.
    pub rel: f64,
    pub final_utility_mean: f64,
}

/// Cost of stopping early: mean of (score at the counterfactual stop minus
/// the final score). Zero or negative when late rounds add value.
pub fn usability_drop(episodes: &[EpisodeData], tau: usize) -> Result<UsabilityDrop, MetricsError> {
    check_episodes(episodes)?;
    let mut drop_sum = 0.0;
    let mut final_sum = 0.0;
    for e in episodes {
        let stop = counterfactual_stop_round(&e.progress, tau);
        drop_sum += e.performance[stop - 1] - e.final_performance();
        final_sum += e.final_performance();
    }
    let n = episodes.len() as f64;
    let abs = drop_sum / n;
    let final_utility_mean = final_sum / n;
    Ok(UsabilityDrop {
        abs,
        rel: abs / final_utility_mean,
        final_utility_mean,
    })
}

/// Mean performance per round after carry-forward extension to the longest
/// episode. counts[k] is the number of episodes contributing at round k + 1,
/// which the extension makes equal to the episode count for every round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Per-round mean performance with shorter episodes extended by carrying
/// their final score forward.
pub fn scaling_curve(episodes: &[EpisodeData]) -> Result<ScalingCurve, MetricsError> {
    check_episodes(episodes)?;
    let k_max = episodes.iter().map(|e| e.performance.len()).max().unwrap();
    let n = episodes.len();
    let mut means = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let sum: f64 = episodes
            .iter()
            .map(|e| e.performance[k.min(e.performance.len() - 1)])
            .sum();
        means.push(sum / n as f64);
    }
    Ok(ScalingCurve {
        means,
        counts: vec![n; k_max],
    })
}

/// One effort-ratio quantile bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBucket {
    /// 1-based bucket number, ordered by ratio.
    pub index: usize,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub mean_performance: f64,
    pub n: usize,
}

/// Equal-count bucketing of episodes by agent-to-user token ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBucketTable {
    pub buckets: Vec<RatioBucket>,
    /// Episodes left out because their ratio is undefined.
    pub undefined_ratio_episodes: usize,
}

/// Buckets episodes into `b` equal-count groups by ratio (stable sort, ties
/// keep episode order, earlier buckets absorb the remainder) and averages
/// final-round performance within each group.
pub fn bucketed_performance(
    episodes: &[EpisodeData],
    b: usize,
) -> Result<RatioBucketTable, MetricsError> {
    check_episodes(episodes)?;
    if b == 0 {
        return Err(MetricsError::InsufficientData { needed: 1, got: 0 });
    }
    let mut valid: Vec<&EpisodeData> = episodes
        .iter()
        .filter(|e| e.agent_to_user_ratio.is_some())
        .collect();
    let undefined_ratio_episodes = episodes.len() - valid.len();
    if valid.len() < b {
        return Err(MetricsError::InsufficientData {
            needed: b,
            got: valid.len(),
        });
    }
    valid.sort_by(|a, b| {
        a.agent_to_user_ratio
            .unwrap()
            .partial_cmp(&b.agent_to_user_ratio.unwrap())
            .expect("ratios are finite")
    });
    let base = valid.len() / b;
    let rem = valid.len() % b;
    let mut buckets = Vec::with_capacity(b);
    let mut at = 0usize;
    for i in 0..b {
        let size = base + usize::from(i < rem);
        let members = &valid[at..at + size];
        let ratios: Vec<f64> = members
            .iter()
            .map(|e| e.agent_to_user_ratio.unwrap())
            .collect();
        let mean_performance =
            members.iter().map(|e| e.final_performance()).sum::<f64>() / size as f64;
        buckets.push(RatioBucket {
            index: i + 1,
            ratio_lo: ratios.iter().copied().fold(f64::INFINITY, f64::min),
            ratio_hi: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_performance,
            n: size,
        });
        at += size;
    }
    Ok(RatioBucketTable {
        buckets,
        undefined_ratio_episodes,
    })
}

/// Aggregate metric report for one episode set at one patience setting.
/// Field names are part of the JSON report contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub overall_utility: f64,
    pub first_update_utility_mean: f64,
    pub final_utility_mean: f64,
    pub refinement_gain_abs: f64,
    pub refinement_gain_rel: f64,
    pub usability_drop_abs: f64,
    pub usability_drop_rel: f64,
    pub tau: usize,
}

impl MetricsReport {
    /// Computes every aggregate at once. Errors mirror the individual
    /// metric functions.
    pub fn compute(episodes: &[EpisodeData], tau: usize) -> Result<Self, MetricsError> {
        let overall = overall_utility(episodes)?;
        let gain = refinement_gain(episodes)?;
        let drop = usability_drop(episodes, tau)?;
        Ok(Self {
            n_episodes: episodes.len(),
            overall_utility: overall,
            first_update_utility_mean: gain.first_update_utility_mean,
            final_utility_mean: drop.final_utility_mean,
            refinement_gain_abs: gain.abs,
            refinement_gain_rel: gain.rel,
            usability_drop_abs: drop.abs,
            usability_drop_rel: drop.rel,
            tau,
        })
    }
}

/// Scaling curve as CSV with the frozen header `round,mean_performance,n`.
pub fn curve_to_csv(curve: &ScalingCurve) -> String {
    let mut out = String::from("round,mean_performance,n\n");
    for (i, (m, n)) in curve.means.iter().zip(&curve.counts).enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, m, n));
    }
    out
}

/// Bucket table as CSV with the frozen header
/// `bucket,ratio_lo,ratio_hi,mean_performance,n`.
pub fn buckets_to_csv(table: &RatioBucketTable) -> String {
    let mut out = String::from("bucket,ratio_lo,ratio_hi,mean_performance,n\n");
    for b in &table.buckets {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.index, b.ratio_lo, b.ratio_hi, b.mean_performance, b.n
        ));
    }
    out
}

/// One row of the per-episode effort scatter export.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub task_id: String,
    pub agent_tokens: u64,
    pub user_tokens: u64,
    pub final_performance: f64,
}

impl ScatterRow {
    pub fn from_trace(trace: &Trace) -> Self {
        let effort = effort_summary(trace);
        Self {
            task_id: trace.task_id.clone(),
            agent_tokens: effort.agent_tokens,
            user_tokens: effort.user_tokens,
            final_performance: trace.performance.last().copied().unwrap_or(0.0),
        }
    }
}

/// Scatter rows as CSV with the frozen header
/// `task_id,agent_tokens,user_tokens,final_performance`.
pub fn scatter_to_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("task_id,agent_tokens,user_tokens,final_performance\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.task_id, r.agent_tokens, r.user_tokens, r.final_performance
        ));
    }
    out
}
