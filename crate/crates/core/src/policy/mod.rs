//! Agent, user, and rater behaviors behind common decision traits.
//!
//! Scripted implementations are first-class and fully deterministic so the
//! whole pipeline runs without network access; LLM-backed implementations
//! adapt the same traits over a chat-completion endpoint. The agent context
//! deliberately omits hidden constraints: only the user-side context carries
//! the full task.

pub mod llm;
pub mod parse;
pub mod scripted;
pub mod template;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Catalog, EnvAction, PlanDocument, TaskInstance};
use crate::trace::ActorId;

pub use llm::{
    set_global_request_cap, ChatCompletion, ChatMessageWire, LlmAgent, LlmClient, LlmRater,
    LlmSettings, LlmUser, ACTION_SPACE_DESCRIPTION,
};
pub use parse::{format_agent_output, format_env_action, parse_agent_output, parse_choice, parse_rating};
pub use scripted::{
    CollabMode, ScriptedAutoAgent, ScriptedCollabAgent, ScriptedRater, ScriptedUser,
};
pub use template::{PromptTemplate, ALLOWED_PLACEHOLDERS, PROMPT_ASSET_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum AgentDecision {
    TakeTaskAction(EnvAction),
    SendMessage(String),
    DoNothing,
    Finish,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserDecision {
    AnswerQuestion(String),
    OfferFeedback(String),
    TakeTaskAction(EnvAction),
    FinishTask,
    DoNothing,
}

/// Actual token usage reported by an LLM backend; scripted policies leave it
/// unset and the engine falls back to the length heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    /// Free-form rationale; logged only, never interpreted.
    pub thought: String,
    pub decision: AgentDecision,
    pub usage: Option<TokenUsage>,
}

impl AgentOutput {
    pub fn scripted(thought: impl Into<String>, decision: AgentDecision) -> Self {
        Self { thought: thought.into(), decision, usage: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserOutput {
    pub thought: String,
    pub decision: UserDecision,
    pub usage: Option<TokenUsage>,
}

impl UserOutput {
    pub fn scripted(thought: impl Into<String>, decision: UserDecision) -> Self {
        Self { thought: thought.into(), decision, usage: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingOutput {
    pub rating: u8,
    pub usage: Option<TokenUsage>,
}

/// Collaboration style of the agent seat: autonomous single-shot planning,
/// or collaborative with one- or two-stage decision prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    Auto,
    OneStage,
    TwoStage,
}

/// What the agent visibly did during a round, from the rater's seat.
/// Messages count as questions; repetition is exact-content recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    FreshQuestion,
    RepeatedQuestion,
    Work,
    NoOp,
}

/// One entry of the shared conversation; `index` is the global position in
/// the chat so policies can refer to "messages after mine".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatEntry {
    pub index: usize,
    pub actor: ActorId,
    pub content: String,
}

/// Task fields visible to the agent: everything except hidden constraints.
#[derive(Debug, Clone, Copy)]
pub struct AgentTaskView<'a> {
    pub task_id: &'a str,
    pub description: &'a str,
    pub origin: &'a str,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub day_count: u32,
}

impl<'a> AgentTaskView<'a> {
    pub fn of(task: &'a TaskInstance) -> Self {
        Self {
            task_id: &task.task_id,
            description: &task.task_description,
            origin: &task.origin,
            start_date: task.start_date,
            end_date: task.end_date,
            day_count: task.day_count(),
        }
    }
}

pub struct AgentContext<'a> {
    pub task: AgentTaskView<'a>,
    pub catalog: &'a Catalog,
    pub plan: &'a PlanDocument,
    /// Rendered plan plus any search results from the agent's last lookup.
    pub observation: &'a str,
    pub chat: &'a [ChatEntry],
    /// 1-based round currently being played.
    pub round: usize,
}

pub struct UserContext<'a> {
    pub task: &'a TaskInstance,
    pub catalog: &'a Catalog,
    pub plan: &'a PlanDocument,
    pub observation: &'a str,
    pub chat: &'a [ChatEntry],
    pub round: usize,
}

pub struct RaterContext<'a> {
    /// Performance change of the round being rated.
    pub delta: f64,
    pub round_kind: RoundKind,
    pub round: usize,
    pub chat: &'a [ChatEntry],
    pub observation: &'a str,
}

pub trait AgentPolicy: Send {
    fn decide(&mut self, ctx: &AgentContext) -> Result<AgentOutput, PolicyError>;
}

pub trait UserPolicy: Send {
    fn decide(&mut self, ctx: &UserContext) -> Result<UserOutput, PolicyError>;
}

pub trait Rater: Send {
    fn rate(&mut self, ctx: &RaterContext) -> Result<RatingOutput, PolicyError>;
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("template uses placeholder {{{name}}} outside the allowed set")]
    UnknownPlaceholder { name: String },
    #[error("no binding provided for placeholder {{{name}}}")]
    MissingPlaceholder { name: String },
    #[error("could not parse model output: {raw:?}")]
    ParseFailure { raw: String },
    #[error("chat endpoint unreachable: {reason}")]
    Transport { reason: String },
    #[error("chat endpoint returned an unusable response: {reason}")]
    Protocol { reason: String },
    #[error("environment variable {var} is unset; it must hold the API key")]
    MissingApiKey { var: String },
}
