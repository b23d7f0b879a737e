//! Episode and batch runners.
//!
//! [`run_episode`] plays one task with an agent, a user, and a rater, and
//! emits a fully validated [`Trace`] plus the final plan evaluation and the
//! effort split. [`run_batch`] fans episodes out over a worker pool, drops
//! episodes that cannot be scored, and aggregates the survivors into a
//! [`MetricsReport`].
//!
//! Turn structure inside a round: the user moves first (from round two
//! onward), the agent second. A phase keeps the turn while its actions leave
//! the shared plan untouched (searches, rejected edits) and yields it on an
//! edit, a message, or an explicit pass. Autonomous runs have no user seat,
//! so the whole episode is one round by construction: there is never a
//! human action to open a second segment.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    apply_action, render_observation, render_plan, Catalog, EnvAction, PlanDocument, TaskInstance,
};
use crate::eval::{evaluate, EvaluationBreakdown};
use crate::metrics::{EpisodeData, MetricsError, MetricsReport};
use crate::policy::{
    format_env_action, AgentContext, AgentDecision, AgentMode, AgentPolicy, AgentTaskView,
    ChatEntry, PolicyError, Rater, RaterContext, RoundKind, TokenUsage, UserContext, UserDecision,
    UserPolicy, PROMPT_ASSET_VERSION,
};
use crate::trace::{
    effort_summary, estimate_tokens, prefill_performance, segment_rounds, ActionKind,
    ActionRecord, ActorId, EffortSummary, SatisfactionSeries, Trace, TraceError,
};

/// Most user actions accepted in one round before the engine forces a yield.
const USER_PHASE_CAP: usize = 8;

/// Most agent actions accepted in one collaborative round.
const AGENT_PHASE_CAP: usize = 16;

/// Action budget for an autonomous run, which is a single long agent phase.
const AUTO_PHASE_CAP: usize = 48;

/// Round-level progress rule: a round counts as progress when the rating
/// clears the satisfaction threshold or the performance delta is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgressRule {
    pub satisfaction_threshold: u8,
    pub use_rating: bool,
    pub use_delta: bool,
}

impl Default for ProgressRule {
    fn default() -> Self {
        Self { satisfaction_threshold: 4, use_rating: true, use_delta: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub max_rounds: usize,
    pub agent_mode: AgentMode,
    pub progress: ProgressRule,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_rounds: 30, agent_mode: AgentMode::OneStage, progress: ProgressRule::default() }
    }
}

impl EpisodeConfig {
    pub fn with_mode(agent_mode: AgentMode) -> Self {
        Self { agent_mode, ..Self::default() }
    }
}

/// Everything one episode produces: the validated trace, the evaluation of
/// the final plan, and the per-party effort split.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trace: Trace,
    pub final_eval: EvaluationBreakdown,
    pub effort: EffortSummary,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("policy failed during episode {task_id}: {source}")]
    Policy {
        task_id: String,
        #[source]
        source: PolicyError,
    },
    #[error("episode {task_id} produced an invalid trace: {source}")]
    Trace {
        task_id: String,
        #[source]
        source: TraceError,
    },
    #[error("could not start worker pool: {reason}")]
    Pool { reason: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// The three seats of one episode. Batch runs build a fresh set per episode
/// so no policy state leaks between tasks.
pub struct PolicySet {
    pub agent: Box<dyn AgentPolicy>,
    pub user: Box<dyn UserPolicy>,
    pub rater: Box<dyn Rater>,
}

/// Episode dropped from a batch, with the reason it could not be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedEpisode {
    pub task_id: String,
    pub reason: String,
}

/// A finished batch: episodes in task order, exclusions, and the aggregate
/// metrics over the episodes that survived.
#[derive(Debug)]
pub struct BatchOutput {
    pub episodes: Vec<EpisodeResult>,
    pub excluded: Vec<ExcludedEpisode>,
    pub report: MetricsReport,
}

/// Reproducibility sidecar written next to batch outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub config_hash: String,
    pub seed: u64,
    pub agent_mode: AgentMode,
    pub tau: usize,
    pub prompt_version: String,
    pub task_ids: Vec<String>,
    pub excluded_episodes: Vec<ExcludedEpisode>,
}

impl BatchManifest {
    pub fn new(
        config_hash: String,
        seed: u64,
        cfg: &EpisodeConfig,
        tau: usize,
        tasks: &[TaskInstance],
        output: &BatchOutput,
    ) -> Self {
        Self {
            config_hash,
            seed,
            agent_mode: cfg.agent_mode,
            tau,
            prompt_version: PROMPT_ASSET_VERSION.to_owned(),
            task_ids: tasks.iter().map(|t| t.task_id.clone()).collect(),
            excluded_episodes: output.excluded.clone(),
        }
    }
}

/// Plays one episode to completion. Policy failures abort the episode; the
/// environment rejecting an action does not (the actor sees the failure text
/// and keeps its turn).
pub fn run_episode(
    task: &TaskInstance,
    catalog: &Catalog,
    agent: &mut dyn AgentPolicy,
    user: &mut dyn UserPolicy,
    rater: &mut dyn Rater,
    cfg: &EpisodeConfig,
) -> Result<EpisodeResult, EngineError> {
    let mut ep = EpisodeRunner::new(task, catalog, cfg);
    let policy_err = |e: PolicyError| EngineError::Policy { task_id: task.task_id.clone(), source: e };
    let mut round = 0usize;
    while !ep.finished && round < cfg.max_rounds {
        round += 1;
        let round_start = ep.actions.len();
        if round > 1 && cfg.agent_mode != AgentMode::Auto {
            ep.user_phase(user, round).map_err(policy_err)?;
        }
        if !ep.finished {
            ep.agent_phase(agent, round).map_err(policy_err)?;
        }
        ep.wrap_round(rater, round, round_start).map_err(policy_err)?;
        if cfg.agent_mode == AgentMode::Auto {
            ep.finished = true;
        }
    }
    ep.into_result()
}

/// Runs one episode per task on `jobs` workers (0 picks the default worker
/// count) and aggregates metrics at `tau`. Episodes whose policy failed,
/// whose trace did not validate, or that never updated the output are
/// excluded rather than poisoning the aggregate; an all-excluded batch
/// surfaces the underlying empty-input metrics error.
pub fn run_batch<F>(
    tasks: &[TaskInstance],
    catalog: &Catalog,
    cfg: &EpisodeConfig,
    tau: usize,
    jobs: usize,
    make: F,
) -> Result<BatchOutput, EngineError>
where
    F: Fn(&TaskInstance) -> Result<PolicySet, PolicyError> + Sync,
{
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EngineError::Pool { reason: e.to_string() })?;
    let results: Vec<Result<EpisodeResult, EngineError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let mut set = make(task)
                    .map_err(|e| EngineError::Policy { task_id: task.task_id.clone(), source: e })?;
                run_episode(task, catalog, &mut *set.agent, &mut *set.user, &mut *set.rater, cfg)
            })
            .collect()
    });

    let mut episodes = Vec::new();
    let mut excluded = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        match result {
            Ok(ep) => {
                if ep.trace.rounds.iter().any(|r| r.contains_output_update) {
                    episodes.push(ep);
                } else {
                    excluded.push(ExcludedEpisode {
                        task_id: task.task_id.clone(),
                        reason: "no output update in any round".to_owned(),
                    });
                }
            }
            Err(e) => {
                excluded.push(ExcludedEpisode { task_id: task.task_id.clone(), reason: e.to_string() })
            }
        }
    }

    let data: Vec<EpisodeData> = episodes.iter().map(|ep| EpisodeData::from_trace(&ep.trace)).collect();
    let report = MetricsReport::compute(&data, tau)?;
    Ok(BatchOutput { episodes, excluded, report })
}

/// Mutable state of one in-flight episode.
struct EpisodeRunner<'a> {
    task: &'a TaskInstance,
    catalog: &'a Catalog,
    cfg: &'a EpisodeConfig,
    plan: PlanDocument,
    chat: Vec<ChatEntry>,
    actions: Vec<ActionRecord>,
    step: u64,
    /// Per-round score, None for rounds without an output update.
    raw_scores: Vec<Option<f64>>,
    ratings: Vec<u8>,
    progress: Vec<bool>,
    prev_score: f64,
    /// Agent message texts from earlier rounds, for repetition detection.
    seen_agent_messages: HashSet<String>,
    finished: bool,
}

impl<'a> EpisodeRunner<'a> {
    fn new(task: &'a TaskInstance, catalog: &'a Catalog, cfg: &'a EpisodeConfig) -> Self {
        Self {
            task,
            catalog,
            cfg,
            plan: PlanDocument::empty(),
            chat: Vec::new(),
            actions: Vec::new(),
            step: 0,
            raw_scores: Vec::new(),
            ratings: Vec::new(),
            progress: Vec::new(),
            prev_score: 0.0,
            seen_agent_messages: HashSet::new(),
            finished: false,
        }
    }

    /// Appends one action. Generated tokens come from reported usage when an
    /// LLM produced the action, clamped so the content/token invariant holds:
    /// empty content is always zero tokens, non-empty content never is.
    fn push_record(
        &mut self,
        actor: ActorId,
        kind: ActionKind,
        content: String,
        usage: Option<TokenUsage>,
        observation: &str,
        output_updated: bool,
    ) {
        self.step += 1;
        let context_tokens = usage.map_or_else(|| estimate_tokens(observation), |u| u.prompt_tokens);
        let tokens_generated = if content.is_empty() {
            0
        } else {
            match usage.map(|u| u.completion_tokens) {
                Some(c) if c > 0 => c,
                _ => estimate_tokens(&content),
            }
        };
        self.actions.push(ActionRecord {
            step: self.step,
            actor,
            kind,
            content,
            tokens_generated,
            context_tokens,
            output_updated,
        });
    }

    fn push_chat(&mut self, actor: ActorId, content: String) {
        self.chat.push(ChatEntry { index: self.chat.len(), actor, content });
    }

    /// User half of a round. Messages and task actions keep the turn; the
    /// phase ends on an explicit pass (recorded, so round segmentation sees
    /// the human turn) or on finishing the task.
    fn user_phase(&mut self, user: &mut dyn UserPolicy, round: usize) -> Result<(), PolicyError> {
        let mut note: Option<String> = None;
        for _ in 0..USER_PHASE_CAP {
            let observation = render_observation(&self.plan, note.as_deref());
            note = None;
            let output = user.decide(&UserContext {
                task: self.task,
                catalog: self.catalog,
                plan: &self.plan,
                observation: &observation,
                chat: &self.chat,
                round,
            })?;
            let usage = output.usage;
            match output.decision {
                UserDecision::AnswerQuestion(text) | UserDecision::OfferFeedback(text) => {
                    self.push_record(
                        ActorId::Human,
                        ActionKind::Message,
                        text.clone(),
                        usage,
                        &observation,
                        false,
                    );
                    self.push_chat(ActorId::Human, text);
                }
                UserDecision::TakeTaskAction(EnvAction::Finish) | UserDecision::FinishTask => {
                    self.push_record(
                        ActorId::Human,
                        ActionKind::Finish,
                        String::new(),
                        usage,
                        &observation,
                        false,
                    );
                    self.finished = true;
                    return Ok(());
                }
                UserDecision::TakeTaskAction(action) => {
                    note = self.apply_task_action(ActorId::Human, &action, usage, &observation);
                }
                UserDecision::DoNothing => {
                    self.push_record(
                        ActorId::Human,
                        ActionKind::NoOp,
                        String::new(),
                        usage,
                        &observation,
                        false,
                    );
                    return Ok(());
                }
            }
        }
        self.push_record(ActorId::Human, ActionKind::NoOp, String::new(), None, "", false);
        Ok(())
    }

    /// Agent half of a round. Searches and rejected actions keep the turn;
    /// edits and messages yield it in collaborative modes. An autonomous run
    /// only ends its single phase by finishing, passing, or exhausting the
    /// action budget.
    fn agent_phase(&mut self, agent: &mut dyn AgentPolicy, round: usize) -> Result<(), PolicyError> {
        let auto = self.cfg.agent_mode == AgentMode::Auto;
        let cap = if auto { AUTO_PHASE_CAP } else { AGENT_PHASE_CAP };
        let mut last_search: Option<String> = None;
        for _ in 0..cap {
            let observation = render_observation(&self.plan, last_search.as_deref());
            last_search = None;
            let output = agent.decide(&AgentContext {
                task: AgentTaskView::of(self.task),
                catalog: self.catalog,
                plan: &self.plan,
                observation: &observation,
                chat: &self.chat,
                round,
            })?;
            let usage = output.usage;
            match output.decision {
                AgentDecision::TakeTaskAction(EnvAction::Finish) | AgentDecision::Finish => {
                    self.push_record(
                        ActorId::Agent,
                        ActionKind::Finish,
                        String::new(),
                        usage,
                        &observation,
                        false,
                    );
                    self.finished = true;
                    return Ok(());
                }
                AgentDecision::TakeTaskAction(action) => {
                    let updated_before = self.plan.clone();
                    last_search = self.apply_task_action(ActorId::Agent, &action, usage, &observation);
                    if self.plan != updated_before && !auto {
                        return Ok(());
                    }
                }
                AgentDecision::SendMessage(text) => {
                    self.push_record(
                        ActorId::Agent,
                        ActionKind::Message,
                        text.clone(),
                        usage,
                        &observation,
                        false,
                    );
                    self.push_chat(ActorId::Agent, text);
                    // Nobody answers in an autonomous run; the message is
                    // logged and the phase moves on.
                    if !auto {
                        return Ok(());
                    }
                }
                AgentDecision::DoNothing => {
                    self.push_record(
                        ActorId::Agent,
                        ActionKind::NoOp,
                        String::new(),
                        usage,
                        &observation,
                        false,
                    );
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    /// Applies an environment action for either seat. A rejected action is
    /// still recorded (the attempt consumed the turn) but leaves the plan
    /// alone; the returned note carries search results or the failure text
    /// into the actor's next observation.
    fn apply_task_action(
        &mut self,
        actor: ActorId,
        action: &EnvAction,
        usage: Option<TokenUsage>,
        observation: &str,
    ) -> Option<String> {
        let content = format_env_action(action);
        match apply_action(&self.plan, action, self.catalog) {
            Ok(outcome) => {
                let updated = outcome.output_updated;
                self.push_record(actor, ActionKind::TaskAction, content, usage, observation, updated);
                self.plan = outcome.plan;
                (!updated).then_some(outcome.observation)
            }
            Err(e) => {
                self.push_record(actor, ActionKind::TaskAction, content, usage, observation, false);
                Some(format!("ACTION FAILED: {e}"))
            }
        }
    }

    /// Scores, classifies, and rates the round that just ended.
    fn wrap_round(
        &mut self,
        rater: &mut dyn Rater,
        round: usize,
        round_start: usize,
    ) -> Result<(), PolicyError> {
        debug_assert!(self.actions.len() > round_start, "a round always records actions");
        let updated = self.actions[round_start..].iter().any(|a| a.output_updated);
        let score = if updated {
            evaluate(&self.plan, self.task, self.catalog).performance
        } else {
            self.prev_score
        };
        self.raw_scores.push(updated.then_some(score));
        let kind = self.classify_round(round_start);
        let delta = score - self.prev_score;
        let observation = render_observation(&self.plan, None);
        let rating = rater
            .rate(&RaterContext {
                delta,
                round_kind: kind,
                round,
                chat: &self.chat,
                observation: &observation,
            })?
            .rating;
        self.ratings.push(rating);
        let rule = self.cfg.progress;
        self.progress.push(
            (rule.use_rating && rating >= rule.satisfaction_threshold)
                || (rule.use_delta && delta > 0.0),
        );
        self.prev_score = score;
        Ok(())
    }

    /// What the agent visibly did this round, for the rater. Messages
    /// dominate work, work dominates passing; a round whose every message
    /// already appeared in an earlier round is a repetition.
    fn classify_round(&mut self, round_start: usize) -> RoundKind {
        let agent_actions: Vec<(ActionKind, &str)> = self.actions[round_start..]
            .iter()
            .filter(|a| a.actor == ActorId::Agent)
            .map(|a| (a.kind, a.content.as_str()))
            .collect();
        let messages: Vec<&str> = agent_actions
            .iter()
            .filter(|(kind, _)| *kind == ActionKind::Message)
            .map(|&(_, content)| content)
            .collect();
        if !messages.is_empty() {
            let repeated = messages.iter().all(|m| self.seen_agent_messages.contains(*m));
            for m in messages {
                self.seen_agent_messages.insert(m.to_owned());
            }
            return if repeated { RoundKind::RepeatedQuestion } else { RoundKind::FreshQuestion };
        }
        let worked = agent_actions
            .iter()
            .any(|(kind, _)| matches!(kind, ActionKind::TaskAction | ActionKind::Finish));
        if worked {
            RoundKind::Work
        } else {
            RoundKind::NoOp
        }
    }

    fn into_result(self) -> Result<EpisodeResult, EngineError> {
        let task_id = self.task.task_id.clone();
        let trace_err = |e: TraceError| EngineError::Trace { task_id: task_id.clone(), source: e };
        let rounds = segment_rounds(&self.actions).map_err(&trace_err)?;
        let performance = prefill_performance(&self.raw_scores).map_err(&trace_err)?;
        let satisfaction = SatisfactionSeries::new(self.ratings).map_err(&trace_err)?;
        let trace = Trace {
            task_id: self.task.task_id.clone(),
            actions: self.actions,
            rounds,
            performance,
            satisfaction,
            progress: self.progress,
            final_plan_snapshot: render_plan(&self.plan),
        };
        trace.validate().map_err(&trace_err)?;
        let final_eval = evaluate(&self.plan, self.task, self.catalog);
        let effort = effort_summary(&trace);
        Ok(EpisodeResult { trace, final_eval, effort })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{load_tasks, Catalog, EXAMPLE_TASKS_JSON};
    use crate::policy::{
        AgentOutput, CollabMode, RatingOutput, ScriptedAutoAgent, ScriptedCollabAgent,
        ScriptedRater, ScriptedUser, UserOutput,
    };

    fn archetype() -> (TaskInstance, &'static Catalog) {
        let catalog = Catalog::builtin();
        let tasks = load_tasks(EXAMPLE_TASKS_JSON, catalog).unwrap();
        (tasks.into_iter().next().unwrap(), catalog)
    }

    fn run_scripted(mode: AgentMode, max_rounds: usize) -> EpisodeResult {
        let (task, catalog) = archetype();
        let cfg = EpisodeConfig { max_rounds, agent_mode: mode, ..EpisodeConfig::default() };
        let mut user = ScriptedUser::default();
        let mut rater = ScriptedRater::default();
        match mode {
            AgentMode::Auto => {
                let mut agent = ScriptedAutoAgent::default();
                run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap()
            }
            AgentMode::OneStage => {
                let mut agent = ScriptedCollabAgent::new(CollabMode::OneStage);
                run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap()
            }
            AgentMode::TwoStage => {
                let mut agent = ScriptedCollabAgent::new(CollabMode::TwoStage);
                run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap()
            }
        }
    }

    #[test]
    fn auto_episode_is_one_round_without_messages() {
        let ep = run_scripted(AgentMode::Auto, 30);
        assert_eq!(ep.trace.rounds.len(), 1);
        assert!(ep.trace.actions.iter().all(|a| a.actor == ActorId::Agent));
        assert!(ep.trace.actions.iter().all(|a| a.kind != ActionKind::Message));
        assert_eq!(ep.trace.actions.last().unwrap().kind, ActionKind::Finish);
        assert!(ep.final_eval.performance > 0.0);
        assert_eq!(ep.effort.user_tokens, 0);
        assert_eq!(ep.effort.agent_to_user_ratio, None);
    }

    #[test]
    fn one_stage_collab_satisfies_all_constraints_within_ten_rounds() {
        let ep = run_scripted(AgentMode::OneStage, 30);
        assert!(ep.trace.rounds.len() <= 10, "took {} rounds", ep.trace.rounds.len());
        assert_eq!(ep.final_eval.constraint_rate, 1.0);
        let questions = ep
            .trace
            .actions
            .iter()
            .filter(|a| a.actor == ActorId::Agent && a.kind == ActionKind::Message)
            .count();
        assert_eq!(questions, 4);
        let edits = ep
            .trace
            .actions
            .iter()
            .filter(|a| a.output_updated)
            .count();
        assert!(edits >= 2, "expected interleaved edits, saw {edits}");
        assert_eq!(ep.trace.actions.last().unwrap().kind, ActionKind::Finish);
    }

    #[test]
    fn two_stage_collab_also_converges() {
        let ep = run_scripted(AgentMode::TwoStage, 30);
        assert_eq!(ep.final_eval.constraint_rate, 1.0);
        assert!(ep.trace.rounds.len() <= 14, "took {} rounds", ep.trace.rounds.len());
    }

    #[test]
    fn two_stage_gate_inserts_a_search_round_between_back_to_back_questions() {
        // Two hidden constraints: the cities and cuisine questions both get
        // "I don't have that.", so nothing changes the plan between them and
        // the agent would message in consecutive rounds; the gate must break
        // that streak with a catalog search.
        let catalog = Catalog::builtin();
        let archetype = archetype().0;
        let task = TaskInstance {
            task_id: "travel-gate-001".to_owned(),
            hidden_constraints: vec![
                crate::env::Constraint::PartySize { people: 2 },
                crate::env::Constraint::BudgetCap { amount: 6300 },
            ],
            ..archetype
        };
        task.validate(catalog).unwrap();
        let cfg = EpisodeConfig::with_mode(AgentMode::TwoStage);
        let mut agent = ScriptedCollabAgent::new(CollabMode::TwoStage);
        let mut user = ScriptedUser::default();
        let mut rater = ScriptedRater::default();
        let ep = run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap();
        let searches = ep
            .trace
            .actions
            .iter()
            .filter(|a| {
                a.actor == ActorId::Agent
                    && a.kind == ActionKind::TaskAction
                    && a.content.starts_with("search_catalog")
            })
            .count();
        assert!(searches >= 1, "gate round should appear as a catalog search");
        assert_eq!(ep.final_eval.constraint_rate, 1.0);
        assert_eq!(ep.trace.actions.last().unwrap().kind, ActionKind::Finish);
    }

    #[test]
    fn episodes_are_deterministic() {
        let a = run_scripted(AgentMode::OneStage, 30);
        let b = run_scripted(AgentMode::OneStage, 30);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.effort, b.effort);
    }

    #[test]
    fn round_cap_of_one_yields_exactly_one_round() {
        let ep = run_scripted(AgentMode::OneStage, 1);
        assert_eq!(ep.trace.rounds.len(), 1);
        assert_eq!(ep.trace.performance.len(), 1);
    }

    #[test]
    fn collab_round_count_respects_the_cap() {
        for cap in [2usize, 3, 5] {
            let ep = run_scripted(AgentMode::OneStage, cap);
            assert!(ep.trace.rounds.len() <= cap);
        }
    }

    struct FixedAgent {
        script: Vec<AgentDecision>,
        at: usize,
    }

    impl FixedAgent {
        fn new(script: Vec<AgentDecision>) -> Self {
            Self { script, at: 0 }
        }
    }

    impl AgentPolicy for FixedAgent {
        fn decide(&mut self, _ctx: &AgentContext) -> Result<AgentOutput, PolicyError> {
            let decision = self
                .script
                .get(self.at)
                .cloned()
                .unwrap_or(AgentDecision::DoNothing);
            self.at += 1;
            Ok(AgentOutput::scripted("scripted step", decision))
        }
    }

    struct IdleUser;

    impl UserPolicy for IdleUser {
        fn decide(&mut self, _ctx: &UserContext) -> Result<UserOutput, PolicyError> {
            Ok(UserOutput::scripted("wait", UserDecision::DoNothing))
        }
    }

    struct ChattyUser;

    impl UserPolicy for ChattyUser {
        fn decide(&mut self, _ctx: &UserContext) -> Result<UserOutput, PolicyError> {
            Ok(UserOutput::scripted(
                "never stop talking",
                UserDecision::AnswerQuestion("more detail".to_owned()),
            ))
        }
    }

    struct FailingRater;

    impl Rater for FailingRater {
        fn rate(&mut self, _ctx: &RaterContext) -> Result<RatingOutput, PolicyError> {
            Err(PolicyError::ParseFailure { raw: "no rating".to_owned() })
        }
    }

    #[test]
    fn repeated_question_rounds_rate_two() {
        let (task, catalog) = archetype();
        let question = "What is your budget?".to_owned();
        let mut agent = FixedAgent::new(vec![
            AgentDecision::SendMessage(question.clone()),
            AgentDecision::SendMessage(question),
        ]);
        let mut user = IdleUser;
        let mut rater = ScriptedRater::default();
        let cfg = EpisodeConfig { max_rounds: 2, ..EpisodeConfig::default() };
        let ep = run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap();
        assert_eq!(ep.trace.satisfaction.as_slice(), &[3, 2]);
        assert_eq!(ep.trace.progress, vec![false, false]);
    }

    #[test]
    fn user_phase_is_force_yielded_at_the_cap() {
        let (task, catalog) = archetype();
        let mut agent = FixedAgent::new(vec![
            AgentDecision::TakeTaskAction(EnvAction::EditPlan(vec![
                crate::env::PlanPatch::SetPartySize { party_size: 2 },
            ])),
            AgentDecision::Finish,
        ]);
        let mut user = ChattyUser;
        let mut rater = ScriptedRater::default();
        let cfg = EpisodeConfig { max_rounds: 2, ..EpisodeConfig::default() };
        let ep = run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap();
        let round2_humans = ep
            .trace
            .actions
            .iter()
            .filter(|a| a.actor == ActorId::Human)
            .collect::<Vec<_>>();
        assert_eq!(round2_humans.len(), USER_PHASE_CAP + 1);
        assert_eq!(round2_humans.last().unwrap().kind, ActionKind::NoOp);
        assert_eq!(ep.trace.rounds.len(), 2);
    }

    #[test]
    fn rejected_actions_keep_the_turn_and_do_not_update_output() {
        let (task, catalog) = archetype();
        let mut agent = FixedAgent::new(vec![
            AgentDecision::TakeTaskAction(EnvAction::EditPlan(vec![
                crate::env::PlanPatch::SetLodging {
                    day: 1,
                    lodging: Some("No Such Lodge".to_owned()),
                },
            ])),
            AgentDecision::DoNothing,
        ]);
        let mut user = IdleUser;
        let mut rater = ScriptedRater::default();
        let cfg = EpisodeConfig { max_rounds: 1, ..EpisodeConfig::default() };
        let ep = run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap();
        assert_eq!(ep.trace.rounds.len(), 1);
        assert!(!ep.trace.rounds[0].contains_output_update);
        assert_eq!(ep.trace.performance.as_slice(), &[0.0]);
        let kinds: Vec<ActionKind> = ep.trace.actions.iter().map(|a| a.kind).collect();
        assert_eq!(kinds, vec![ActionKind::TaskAction, ActionKind::NoOp]);
    }

    #[test]
    fn policy_failure_aborts_with_the_task_id() {
        let (task, catalog) = archetype();
        let mut agent = FixedAgent::new(vec![AgentDecision::TakeTaskAction(EnvAction::EditPlan(
            vec![crate::env::PlanPatch::SetPartySize { party_size: 2 }],
        ))]);
        let mut user = IdleUser;
        let mut rater = FailingRater;
        let cfg = EpisodeConfig::default();
        let err =
            run_episode(&task, catalog, &mut agent, &mut user, &mut rater, &cfg).unwrap_err();
        match err {
            EngineError::Policy { task_id, .. } => assert_eq!(task_id, task.task_id),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn batch_runs_in_task_order_and_excludes_failures() {
        let catalog = Catalog::builtin();
        let tasks = crate::env::generate_task_set(7, 4, catalog).unwrap();
        let poison = tasks[2].task_id.clone();
        let out = run_batch(
            &tasks,
            catalog,
            &EpisodeConfig::with_mode(AgentMode::OneStage),
            1,
            2,
            |task| {
                if task.task_id == poison {
                    return Err(PolicyError::Transport { reason: "injected outage".to_owned() });
                }
                Ok(PolicySet {
                    agent: Box::new(ScriptedCollabAgent::new(CollabMode::OneStage)),
                    user: Box::new(ScriptedUser::default()),
                    rater: Box::new(ScriptedRater::default()),
                })
            },
        )
        .unwrap();
        assert_eq!(out.episodes.len(), 3);
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].task_id, poison);
        assert!(out.excluded[0].reason.contains("injected outage"));
        let expected_order: Vec<&String> = tasks
            .iter()
            .map(|t| &t.task_id)
            .filter(|id| **id != poison)
            .collect();
        let got_order: Vec<&String> = out.episodes.iter().map(|e| &e.trace.task_id).collect();
        assert_eq!(got_order, expected_order);
        assert_eq!(out.report.n_episodes, 3);
    }

    #[test]
    fn all_excluded_batch_surfaces_empty_input() {
        let catalog = Catalog::builtin();
        let tasks = crate::env::generate_task_set(7, 2, catalog).unwrap();
        let err = run_batch(
            &tasks,
            catalog,
            &EpisodeConfig::default(),
            1,
            1,
            |_| Err(PolicyError::Transport { reason: "down".to_owned() }),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::Metrics(MetricsError::EmptyInput)));
    }

    #[test]
    fn benchmark_seed_set_collab_dominates_auto_and_satisfies_constraints() {
        let catalog = Catalog::builtin();
        let tasks = crate::env::generate_task_set(
            crate::env::BENCHMARK_TASK_SEED,
            crate::env::BENCHMARK_TASK_COUNT,
            catalog,
        )
        .unwrap();
        let collab = run_batch(
            &tasks,
            catalog,
            &EpisodeConfig::with_mode(AgentMode::OneStage),
            1,
            0,
            |_| {
                Ok(PolicySet {
                    agent: Box::new(ScriptedCollabAgent::new(CollabMode::OneStage)),
                    user: Box::new(ScriptedUser::default()),
                    rater: Box::new(ScriptedRater::default()),
                })
            },
        )
        .unwrap();
        let auto = run_batch(
            &tasks,
            catalog,
            &EpisodeConfig::with_mode(AgentMode::Auto),
            1,
            0,
            |_| {
                Ok(PolicySet {
                    agent: Box::new(ScriptedAutoAgent::default()),
                    user: Box::new(ScriptedUser::default()),
                    rater: Box::new(ScriptedRater::default()),
                })
            },
        )
        .unwrap();
        assert!(collab.excluded.is_empty());
        assert!(auto.excluded.is_empty());
        for ep in &collab.episodes {
            assert_eq!(
                ep.final_eval.constraint_rate, 1.0,
                "task {} left constraints unmet",
                ep.trace.task_id
            );
        }
        assert!(
            collab.report.final_utility_mean > auto.report.final_utility_mean,
            "collab {} vs auto {}",
            collab.report.final_utility_mean,
            auto.report.final_utility_mean
        );
    }

    #[test]
    fn manifest_captures_batch_shape() {
        let catalog = Catalog::builtin();
        let tasks = crate::env::generate_task_set(7, 2, catalog).unwrap();
        let cfg = EpisodeConfig::with_mode(AgentMode::OneStage);
        let out = run_batch(&tasks, catalog, &cfg, 1, 1, |_| {
            Ok(PolicySet {
                agent: Box::new(ScriptedCollabAgent::new(CollabMode::OneStage)),
                user: Box::new(ScriptedUser::default()),
                rater: Box::new(ScriptedRater::default()),
            })
        })
        .unwrap();
        let manifest = BatchManifest::new("abc123".to_owned(), 7, &cfg, 1, &tasks, &out);
        assert_eq!(manifest.task_ids.len(), 2);
        assert_eq!(manifest.prompt_version, PROMPT_ASSET_VERSION);
        assert!(manifest.excluded_episodes.is_empty());
        let json = serde_json::to_string(&manifest).unwrap();
        let back: BatchManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, manifest);
    }
}
