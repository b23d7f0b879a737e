//! Episode trace model: typed action records, round segmentation, per-round
//! score series, and effort accounting.
//!
//! A trace is a step-ordered list of actions tagged by actor. Rounds are the
//! maximal blocks matching human-actions-then-agent-actions: a new round opens
//! at the start of the trace and at every agent-to-human transition, so the
//! rounds always tile the trace exactly. Round 1 may contain zero human
//! actions because the episode opens with the task already issued.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which side of the collaboration produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorId {
    Human,
    Agent,
}

/// What an action did. Finish terminates the trace; no action may follow it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// Environment-facing work: a plan edit or a catalog search.
    TaskAction,
    /// Chat text addressed to the other party.
    Message,
    /// An explicit yield.
    NoOp,
    /// Declares the task done and ends the episode.
    Finish,
}

/// One step of an episode.
///
/// Invariants: steps are strictly increasing within a trace, and
/// tokens_generated is zero exactly when content is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    /// 1-based position in the episode.
    pub step: u64,
    pub actor: ActorId,
    pub kind: ActionKind,
    /// Message text, canonical task-action text, or empty for yields.
    pub content: String,
    /// Tokens the actor produced for this action.
    pub tokens_generated: u64,
    /// Tokens of context the actor consumed before deciding.
    pub context_tokens: u64,
    /// True when the action changed the shared output document.
    pub output_updated: bool,
}

impl ActionRecord {
    /// Record for a scripted actor: generated tokens follow the length
    /// heuristic so the content/token invariant holds by construction.
    pub fn scripted(
        step: u64,
        actor: ActorId,
        kind: ActionKind,
        content: impl Into<String>,
        context_tokens: u64,
        output_updated: bool,
    ) -> Self {
        let content = content.into();
        let tokens_generated = estimate_tokens(&content);
        Self {
            step,
            actor,
            kind,
            content,
            tokens_generated,
            context_tokens,
            output_updated,
        }
    }
}

/// Token estimate for scripted text: one token per four characters, rounded
/// up, so any non-empty text costs at least one token.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// One segmented round: a maximal human*-agent* block of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    /// 1-based round number.
    pub index: usize,
    /// Step value of the first action in the round.
    pub start_step: u64,
    /// Step value of the last action in the round, inclusive.
    pub end_step: u64,
    /// True when any action in the round updated the output document.
    pub contains_output_update: bool,
}

/// Per-round performance scores, each in [0, 1], with no-update rounds
/// already prefilled from the previous round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceSeries(Vec<f64>);

impl PerformanceSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, TraceError> {
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(TraceError::ScoreOutOfRange { value: v });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for PerformanceSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-round Likert satisfaction ratings, each in 1..=5.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SatisfactionSeries(Vec<u8>);

impl SatisfactionSeries {
    pub fn new(values: Vec<u8>) -> Result<Self, TraceError> {
        for &v in &values {
            if !(1..=5).contains(&v) {
                return Err(TraceError::RatingOutOfRange { value: v });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

impl std::ops::Deref for SatisfactionSeries {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

/// A full episode trace with its derived rounds and per-round series.
///
/// The rounds, performance, satisfaction, and progress vectors are all
/// aligned: one entry per segmented round.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub task_id: String,
    pub actions: Vec<ActionRecord>,
    pub rounds: Vec<Round>,
    pub performance: PerformanceSeries,
    pub satisfaction: SatisfactionSeries,
    /// Per-round progress flags as judged by the engine's progress rule.
    pub progress: Vec<bool>,
    /// Rendered final state of the output document. Not persisted in trace
    /// files; loaders leave it empty.
    pub final_plan_snapshot: String,
}

impl Trace {
    /// Checks every structural invariant. Loaders call this on import and the
    /// engine calls it on every trace it emits.
    pub fn validate(&self) -> Result<(), TraceError> {
        let rounds = segment_rounds(&self.actions)?;
        let mut prev_step = 0u64;
        for (i, a) in self.actions.iter().enumerate() {
            if a.step <= prev_step {
                return Err(TraceError::NonIncreasingSteps { step: a.step });
            }
            prev_step = a.step;
            if (a.tokens_generated == 0) != a.content.is_empty() {
                return Err(TraceError::TokenContentMismatch { step: a.step });
            }
            if a.kind == ActionKind::Finish && i + 1 != self.actions.len() {
                return Err(TraceError::FinishNotLast { step: a.step });
            }
        }
        if rounds != self.rounds {
            return Err(TraceError::RoundMismatch);
        }
        let k = rounds.len();
        for (what, len) in [
            ("performance", self.performance.len()),
            ("satisfaction", self.satisfaction.len()),
            ("progress", self.progress.len()),
        ] {
            if len != k {
                return Err(TraceError::SeriesLengthMismatch {
                    what,
                    expected: k,
                    got: len,
                });
            }
        }
        let mut prev = 0.0f64;
        for (round, &p) in rounds.iter().zip(self.performance.iter()) {
            if !round.contains_output_update && p != prev {
                return Err(TraceError::PrefillViolation { round: round.index });
            }
            prev = p;
        }
        Ok(())
    }
}

/// Split of an episode into the initial stage (through the first output
/// update) and the refinement stage (everything after it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSplit {
    /// 1-based round of the first output update, absent when no round
    /// updated the output.
    pub first_update_round: Option<usize>,
    /// Rounds in the initial stage; the whole episode when no update exists.
    pub initial_rounds: usize,
    /// Rounds after the first update.
    pub refinement_rounds: usize,
}

/// Effort spent in one episode, split by party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortSummary {
    /// Rounds containing at least one substantive (non-yield) human action.
    pub human_rounds: usize,
    pub agent_tokens: u64,
    pub user_tokens: u64,
    pub combined_tokens: u64,
    /// agent_tokens / user_tokens; None when the user generated no tokens,
    /// never a division fault.
    pub agent_to_user_ratio: Option<f64>,
    /// Context tokens consumed across all human actions.
    pub context_tokens_read_by_human: u64,
}

/// Everything that can go wrong constructing or validating trace data.
#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace has no actions")]
    EmptyTrace,
    #[error("performance score {value} outside [0, 1]")]
    ScoreOutOfRange { value: f64 },
    #[error("satisfaction rating {value} outside 1..=5")]
    RatingOutOfRange { value: u8 },
    #[error("step {step} does not increase over its predecessor")]
    NonIncreasingSteps { step: u64 },
    #[error("step {step} breaks the rule: tokens_generated is zero exactly when content is empty")]
    TokenContentMismatch { step: u64 },
    #[error("finish action at step {step} is not the last action")]
    FinishNotLast { step: u64 },
    #[error("embedded rounds differ from re-derived segmentation")]
    RoundMismatch,
    #[error("{what} has {got} entries, expected {expected}")]
    SeriesLengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("round {round} has no output update but its score differs from the previous round")]
    PrefillViolation { round: usize },
}

/// Segments actions into rounds: a new round at the start and at every
/// agent-to-human transition. The rounds tile the trace exactly.
pub fn segment_rounds(actions: &[ActionRecord]) -> Result<Vec<Round>, TraceError> {
    if actions.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut rounds: Vec<Round> = Vec::new();
    let mut start = 0usize;
    for i in 1..=actions.len() {
        let boundary = i == actions.len()
            || (actions[i].actor == ActorId::Human && actions[i - 1].actor == ActorId::Agent);
        if boundary {
            let span = &actions[start..i];
            rounds.push(Round {
                index: rounds.len() + 1,
                start_step: span[0].step,
                end_step: span[span.len() - 1].step,
                contains_output_update: span.iter().any(|a| a.output_updated),
            });
            start = i;
        }
    }
    Ok(rounds)
}

/// 1-based index of the first round containing an output update.
pub fn first_update_round(rounds: &[Round]) -> Option<usize> {
    rounds
        .iter()
        .find(|r| r.contains_output_update)
        .map(|r| r.index)
}

/// Stage split derived from segmented rounds.
pub fn stage_split(rounds: &[Round]) -> StageSplit {
    let total = rounds.len();
    match first_update_round(rounds) {
        Some(k) => StageSplit {
            first_update_round: Some(k),
            initial_rounds: k,
            refinement_rounds: total - k,
        },
        None => StageSplit {
            first_update_round: None,
            initial_rounds: total,
            refinement_rounds: 0,
        },
    }
}

/// Builds the performance series from raw per-round scores: rounds without a
/// fresh score inherit the previous value, seeded with zero.
pub fn prefill_performance(raw: &[Option<f64>]) -> Result<PerformanceSeries, TraceError> {
    let mut prev = 0.0f64;
    let mut out = Vec::with_capacity(raw.len());
    for v in raw {
        if let Some(x) = *v {
            if !(0.0..=1.0).contains(&x) {
                return Err(TraceError::ScoreOutOfRange { value: x });
            }
            prev = x;
        }
        out.push(prev);
    }
    Ok(PerformanceSeries(out))
}

/// Tallies effort for one trace. Token sums are conserved: every action's
/// tokens land in exactly one side's total.
pub fn effort_summary(trace: &Trace) -> EffortSummary {
    let mut agent_tokens = 0u64;
    let mut user_tokens = 0u64;
    let mut context_read = 0u64;
    for a in &trace.actions {
        match a.actor {
            ActorId::Agent => agent_tokens += a.tokens_generated,
            ActorId::Human => {
                user_tokens += a.tokens_generated;
                context_read += a.context_tokens;
            }
        }
    }
    let human_rounds = trace
        .rounds
        .iter()
        .filter(|r| {
            trace
                .actions
                .iter()
                .filter(|a| a.step >= r.start_step && a.step <= r.end_step)
                .any(|a| a.actor == ActorId::Human && a.kind != ActionKind::NoOp)
        })
        .count();
    EffortSummary {
        human_rounds,
        agent_tokens,
        user_tokens,
        combined_tokens: agent_tokens + user_tokens,
        agent_to_user_ratio: (user_tokens > 0).then(|| agent_tokens as f64 / user_tokens as f64),
        context_tokens_read_by_human: context_read,
    }
}
