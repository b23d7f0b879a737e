//! LLM-backed policies over an OpenAI-compatible chat-completions endpoint.
//!
//! The client is blocking, retries transient failures with exponential
//! backoff, and never retries 4xx or malformed-body replies. Policies parse
//! model text with the grammar in [`super::parse`]; a reply that fails to
//! parse earns exactly one reprompt carrying a format reminder, after which
//! the turn degrades to DoNothing. Transport and protocol errors propagate:
//! the engine aborts and excludes the episode instead of fabricating data.

use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::parse::{
    action_to_decision, format_env_action, parse_agent_output, parse_choice, parse_rating,
    ParsedAction, ParsedPayload,
};
use super::template::{self, PromptTemplate};
use super::{
    AgentContext, AgentDecision, AgentMode, AgentOutput, AgentPolicy, ChatEntry, PolicyError,
    Rater, RaterContext, RatingOutput, TokenUsage, UserContext, UserDecision, UserOutput,
    UserPolicy,
};
use crate::env::EnvAction;
use crate::trace::ActorId;

/// Connection settings; the API key is read from the named environment
/// variable at client construction, never stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_temperature() -> f64 {
    0.0
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

pub const ROLES: [&str; 3] = ["system", "user", "assistant"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessageWire {
    pub role: String,
    pub content: String,
}

impl ChatMessageWire {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".to_owned(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".to_owned(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".to_owned(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatCompletion {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Debug, Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Debug, Deserialize)]
struct ApiMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Optional process-wide cap on concurrent chat requests; one permit per
/// in-flight request across all episodes.
struct RequestGate {
    max: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

static REQUEST_GATE: OnceLock<RequestGate> = OnceLock::new();

/// Installs the cap; returns false if one was already installed.
pub fn set_global_request_cap(max: usize) -> bool {
    REQUEST_GATE
        .set(RequestGate { max: max.max(1), in_flight: Mutex::new(0), released: Condvar::new() })
        .is_ok()
}

struct GatePermit(&'static RequestGate);

impl Drop for GatePermit {
    fn drop(&mut self) {
        let mut count = self.0.in_flight.lock().expect("gate mutex poisoned");
        *count -= 1;
        self.0.released.notify_one();
    }
}

fn acquire_permit() -> Option<GatePermit> {
    let gate = REQUEST_GATE.get()?;
    let mut count = gate.in_flight.lock().expect("gate mutex poisoned");
    while *count >= gate.max {
        count = gate.released.wait(count).expect("gate mutex poisoned");
    }
    *count += 1;
    Some(GatePermit(gate))
}

pub struct LlmClient {
    endpoint: String,
    model: String,
    api_key: String,
    temperature: f64,
    max_attempts: u32,
    backoff_ms: u64,
    http: reqwest::blocking::Client,
}

/// Manual impl so the API key can never leak through debug formatting.
impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .field("temperature", &self.temperature)
            .field("max_attempts", &self.max_attempts)
            .finish()
    }
}

impl LlmClient {
    pub fn new(settings: &LlmSettings) -> Result<Self, PolicyError> {
        let api_key = std::env::var(&settings.api_key_env)
            .map_err(|_| PolicyError::MissingApiKey { var: settings.api_key_env.clone() })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| PolicyError::Transport { reason: e.to_string() })?;
        Ok(Self {
            endpoint: settings.endpoint.clone(),
            model: settings.model.clone(),
            api_key,
            temperature: settings.temperature,
            max_attempts: settings.max_attempts.max(1),
            backoff_ms: settings.backoff_ms,
            http,
        })
    }

    /// One request/response exchange. Transport failures and 5xx replies are
    /// retried with exponential backoff up to max_attempts; 4xx and
    /// malformed bodies fail immediately as protocol errors.
    pub fn complete_chat(
        &self,
        messages: &[ChatMessageWire],
    ) -> Result<ChatCompletion, PolicyError> {
        if messages.is_empty() {
            return Err(PolicyError::Protocol { reason: "empty message list".to_owned() });
        }
        if let Some(bad) = messages.iter().find(|m| !ROLES.contains(&m.role.as_str())) {
            return Err(PolicyError::Protocol { reason: format!("unknown role {:?}", bad.role) });
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        });
        let _permit = acquire_permit();
        let mut last_failure = String::new();
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(
                    self.backoff_ms << (attempt - 2).min(16),
                ));
            }
            let sent = self
                .http
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let response = match sent {
                Ok(response) => response,
                Err(e) => {
                    last_failure = format!("attempt {attempt}: {e}");
                    continue;
                }
            };
            let status = response.status();
            if status.is_server_error() {
                last_failure = format!("attempt {attempt}: status {status}");
                continue;
            }
            if !status.is_success() {
                return Err(PolicyError::Protocol {
                    reason: format!("status {status} from chat endpoint"),
                });
            }
            let parsed: ApiResponse = response
                .json()
                .map_err(|e| PolicyError::Protocol { reason: format!("bad body: {e}") })?;
            let first = parsed
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| PolicyError::Protocol { reason: "no choices".to_owned() })?;
            let content = first
                .message
                .content
                .ok_or_else(|| PolicyError::Protocol { reason: "no content".to_owned() })?;
            let usage = parsed.usage.unwrap_or(ApiUsage { prompt_tokens: None, completion_tokens: None });
            return Ok(ChatCompletion {
                content,
                prompt_tokens: usage.prompt_tokens.unwrap_or(0),
                completion_tokens: usage.completion_tokens.unwrap_or(0),
            });
        }
        Err(PolicyError::Transport {
            reason: format!("{} attempts exhausted; last: {last_failure}", self.max_attempts),
        })
    }
}

/// Task-action grammar shown to models; the parser in [`super::parse`] is
/// the authority, this text just documents it.
pub const ACTION_SPACE_DESCRIPTION: &str = r#"
- edit_plan {"patches": [...]}: replace parts of the shared travel plan. Each patch is a JSON object with an "op" field, one of: {"op":"clear"} | {"op":"set_party_size","party_size":N} | {"op":"set_days","days":N} | {"op":"set_day_city","day":N,"city":"Name"} | {"op":"add_attraction","day":N,"name":"Name"} | {"op":"remove_attraction","day":N,"name":"Name"} | {"op":"add_meal","day":N,"restaurant":"Name"} | {"op":"remove_meal","day":N,"restaurant":"Name"} | {"op":"set_lodging","day":N,"lodging":"Name"} | {"op":"add_transport","day":N,"origin":"A","destination":"B","mode":"flight"} | {"op":"clear_transport"}. Days are 1-based.
- search_catalog {"kind":"cities"}: look up the travel catalog. "kind" is one of "cities", "attractions", "restaurants", "lodgings", "transport"; optional filters: "city", "region", "cuisine".
- finish: declare the task complete.
- do_nothing: yield this turn.
To take a task action, reply exactly "Thought: ...\nAction: <action>". To talk to your teammate instead, reply "Thought: ...\nMessage: <text>".
"#;

const FORMAT_REMINDER: &str = "Your previous reply did not match the required output format. \
Answer again, strictly following the OUTPUT FORMAT instruction from the first message.";

fn render_chat(chat: &[ChatEntry]) -> String {
    if chat.is_empty() {
        return "(no messages yet)".to_owned();
    }
    chat.iter()
        .map(|m| {
            let who = match m.actor {
                ActorId::Human => "User",
                ActorId::Agent => "Agent",
            };
            format!("{who}: {}", m.content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_history(history: &[String]) -> String {
    if history.is_empty() {
        return "(none)".to_owned();
    }
    history
        .iter()
        .enumerate()
        .map(|(i, h)| format!("{}. {h}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Adds one exchange to the transcript and accumulates token usage.
fn ask(
    client: &LlmClient,
    messages: &mut Vec<ChatMessageWire>,
    usage: &mut TokenUsage,
) -> Result<String, PolicyError> {
    let done = client.complete_chat(messages)?;
    usage.prompt_tokens += done.prompt_tokens;
    usage.completion_tokens += done.completion_tokens;
    messages.push(ChatMessageWire::assistant(done.content.clone()));
    Ok(done.content)
}

pub struct LlmAgent {
    client: LlmClient,
    mode: AgentMode,
    name: String,
    /// Raw accumulated thought text carried between turns.
    scratchpad: String,
    action_history: Vec<String>,
}

impl LlmAgent {
    pub fn new(settings: &LlmSettings, mode: AgentMode) -> Result<Self, PolicyError> {
        Ok(Self {
            client: LlmClient::new(settings)?,
            mode,
            name: "Agent".to_owned(),
            scratchpad: String::new(),
            action_history: Vec::new(),
        })
    }

    fn system_prompt(&self, ctx: &AgentContext) -> Result<String, PolicyError> {
        let chat_history = render_chat(ctx.chat);
        let action_history = render_history(&self.action_history);
        let bindings: Vec<(&str, &str)> = vec![
            ("name", &self.name),
            ("task_description", ctx.task.description),
            ("scratchpad", &self.scratchpad),
            ("observation", ctx.observation),
            ("chat_history", &chat_history),
            ("action_history", &action_history),
            ("team_members", "the User"),
        ];
        let template = match self.mode {
            AgentMode::Auto => template::agent_system_auto(),
            AgentMode::OneStage | AgentMode::TwoStage => template::agent_system_collab(),
        };
        template.render(&bindings)
    }

    /// One model call parsed by the output grammar, with a single reprompt
    /// on bad format; `accept` narrows which payloads this stage allows.
    fn ask_parsed(
        &self,
        messages: &mut Vec<ChatMessageWire>,
        usage: &mut TokenUsage,
        accept: impl Fn(&ParsedPayload) -> bool,
    ) -> Result<Option<(String, ParsedPayload)>, PolicyError> {
        for nudge in [false, true] {
            if nudge {
                messages.push(ChatMessageWire::user(FORMAT_REMINDER.to_owned()));
            }
            let text = ask(&self.client, messages, usage)?;
            if let Ok(parsed) = parse_agent_output(&text) {
                if accept(&parsed.payload) {
                    return Ok(Some((parsed.thought, parsed.payload)));
                }
            }
        }
        Ok(None)
    }

    fn record(&mut self, thought: &str, decision: &AgentDecision) {
        if !thought.is_empty() {
            self.scratchpad.push_str("- ");
            self.scratchpad.push_str(thought);
            self.scratchpad.push('\n');
        }
        let entry = match decision {
            AgentDecision::TakeTaskAction(action) => format_env_action(action),
            AgentDecision::SendMessage(text) => format!("message: {text}"),
            AgentDecision::DoNothing => "do_nothing".to_owned(),
            AgentDecision::Finish => "finish".to_owned(),
        };
        self.action_history.push(entry);
    }
}

impl AgentPolicy for LlmAgent {
    fn decide(&mut self, ctx: &AgentContext) -> Result<AgentOutput, PolicyError> {
        let mut usage = TokenUsage { prompt_tokens: 0, completion_tokens: 0 };
        let system = self.system_prompt(ctx)?;
        let mut messages = vec![ChatMessageWire::system(system)];

        let (thought, decision) = match self.mode {
            AgentMode::Auto | AgentMode::OneStage => {
                let stage = template::agent_next_action()
                    .render(&[("action_space_description", ACTION_SPACE_DESCRIPTION)])?;
                messages.push(ChatMessageWire::user(stage));
                let allow_messages = self.mode == AgentMode::OneStage;
                let accepted = self.ask_parsed(&mut messages, &mut usage, |p| match p {
                    ParsedPayload::Action(_) => true,
                    ParsedPayload::Message(_) => allow_messages,
                    ParsedPayload::PlanChoice(3) => true,
                    ParsedPayload::PlanChoice(_) => false,
                })?;
                match accepted {
                    Some((thought, ParsedPayload::Action(action))) => {
                        (thought, action_to_decision(&action))
                    }
                    Some((thought, ParsedPayload::Message(text))) => {
                        (thought, AgentDecision::SendMessage(text))
                    }
                    Some((thought, ParsedPayload::PlanChoice(_))) => {
                        (thought, AgentDecision::DoNothing)
                    }
                    None => ("format fallback".to_owned(), AgentDecision::DoNothing),
                }
            }
            AgentMode::TwoStage => {
                let stage = template::agent_plan_stage().render(&[])?;
                messages.push(ChatMessageWire::user(stage));
                let accepted =
                    self.ask_parsed(&mut messages, &mut usage, |_| true)?;
                match accepted {
                    Some((thought, ParsedPayload::PlanChoice(1))) => {
                        let follow = template::agent_send_message().render(&[])?;
                        messages.push(ChatMessageWire::user(follow));
                        let message = self.ask_parsed(&mut messages, &mut usage, |p| {
                            matches!(p, ParsedPayload::Message(_))
                        })?;
                        match message {
                            Some((thought2, ParsedPayload::Message(text))) => {
                                let t = if thought2.is_empty() { thought } else { thought2 };
                                (t, AgentDecision::SendMessage(text))
                            }
                            _ => ("format fallback".to_owned(), AgentDecision::DoNothing),
                        }
                    }
                    Some((thought, ParsedPayload::PlanChoice(2))) => {
                        let follow = template::agent_next_action()
                            .render(&[("action_space_description", ACTION_SPACE_DESCRIPTION)])?;
                        messages.push(ChatMessageWire::user(follow));
                        let action = self.ask_parsed(&mut messages, &mut usage, |p| {
                            matches!(p, ParsedPayload::Action(_))
                        })?;
                        match action {
                            Some((thought2, ParsedPayload::Action(action))) => {
                                let t = if thought2.is_empty() { thought } else { thought2 };
                                (t, action_to_decision(&action))
                            }
                            _ => ("format fallback".to_owned(), AgentDecision::DoNothing),
                        }
                    }
                    Some((thought, ParsedPayload::PlanChoice(_))) => {
                        (thought, AgentDecision::DoNothing)
                    }
                    // The model may jump straight to a message or action.
                    Some((thought, ParsedPayload::Message(text))) => {
                        (thought, AgentDecision::SendMessage(text))
                    }
                    Some((thought, ParsedPayload::Action(action))) => {
                        (thought, action_to_decision(&action))
                    }
                    None => ("format fallback".to_owned(), AgentDecision::DoNothing),
                }
            }
        };

        self.record(&thought, &decision);
        Ok(AgentOutput { thought, decision, usage: Some(usage) })
    }
}

pub struct LlmUser {
    client: LlmClient,
    action_history: Vec<String>,
}

impl LlmUser {
    pub fn new(settings: &LlmSettings) -> Result<Self, PolicyError> {
        Ok(Self { client: LlmClient::new(settings)?, action_history: Vec::new() })
    }

    fn shared_bindings<'b>(
        &'b self,
        ctx: &'b UserContext,
        chat_history: &'b str,
        additional_info: &'b str,
        action_history: &'b str,
    ) -> Vec<(&'static str, &'b str)> {
        vec![
            ("task_description", &ctx.task.task_description),
            ("observation", ctx.observation),
            ("chat_history", chat_history),
            ("additional_info", additional_info),
            ("action_history", action_history),
            // The decision rules referenced by the prompt are not pinned
            // down anywhere; we ship an empty default on purpose.
            ("rules", ""),
            ("available_actions", ACTION_SPACE_DESCRIPTION),
            ("action_space_description", ACTION_SPACE_DESCRIPTION),
        ]
    }

    fn follow_up(
        &self,
        template: &PromptTemplate,
        bindings: &[(&str, &str)],
        usage: &mut TokenUsage,
    ) -> Result<String, PolicyError> {
        let mut messages = vec![ChatMessageWire::user(template.render(bindings)?)];
        ask(&self.client, &mut messages, usage)
    }
}

impl UserPolicy for LlmUser {
    fn decide(&mut self, ctx: &UserContext) -> Result<UserOutput, PolicyError> {
        let mut usage = TokenUsage { prompt_tokens: 0, completion_tokens: 0 };
        let chat_history = render_chat(ctx.chat);
        let additional_info = ctx
            .task
            .hidden_constraints
            .iter()
            .map(|c| format!("- {}", c.describe()))
            .collect::<Vec<_>>()
            .join("\n");
        let action_history = render_history(&self.action_history);
        let bindings =
            self.shared_bindings(ctx, &chat_history, &additional_info, &action_history);

        let mut messages =
            vec![ChatMessageWire::user(template::user_decide().render(&bindings)?)];
        let mut choice = None;
        for nudge in [false, true] {
            if nudge {
                messages.push(ChatMessageWire::user(FORMAT_REMINDER.to_owned()));
            }
            let text = ask(&self.client, &mut messages, &mut usage)?;
            if let Ok(n) = parse_choice(&text) {
                choice = Some(n);
                break;
            }
        }

        let (thought, decision) = match choice {
            Some(1) => {
                let text =
                    self.follow_up(template::user_answer(), &bindings, &mut usage)?;
                let text = text.trim().to_owned();
                if text.is_empty() {
                    ("empty answer".to_owned(), UserDecision::DoNothing)
                } else {
                    ("answer the pending question".to_owned(), UserDecision::AnswerQuestion(text))
                }
            }
            Some(2) => {
                let text =
                    self.follow_up(template::user_feedback(), &bindings, &mut usage)?;
                let text = text.trim().to_owned();
                if text.is_empty() {
                    ("empty feedback".to_owned(), UserDecision::DoNothing)
                } else {
                    ("point out a problem".to_owned(), UserDecision::OfferFeedback(text))
                }
            }
            Some(3) => {
                let mut messages = vec![ChatMessageWire::user(
                    template::user_task_action().render(&bindings)?,
                )];
                let mut action = None;
                for nudge in [false, true] {
                    if nudge {
                        messages.push(ChatMessageWire::user(FORMAT_REMINDER.to_owned()));
                    }
                    let text = ask(&self.client, &mut messages, &mut usage)?;
                    if let Ok(parsed) = parse_agent_output(&text) {
                        if let ParsedPayload::Action(a) = parsed.payload {
                            action = Some(a);
                            break;
                        }
                    }
                }
                match action {
                    Some(ParsedAction::Edit(patches)) => (
                        "edit the plan myself".to_owned(),
                        UserDecision::TakeTaskAction(EnvAction::EditPlan(patches)),
                    ),
                    Some(ParsedAction::Search(query)) => (
                        "look something up".to_owned(),
                        UserDecision::TakeTaskAction(EnvAction::SearchCatalog(query)),
                    ),
                    Some(ParsedAction::Finish) => {
                        ("declare the task done".to_owned(), UserDecision::FinishTask)
                    }
                    Some(ParsedAction::DoNothing) | None => {
                        ("format fallback".to_owned(), UserDecision::DoNothing)
                    }
                }
            }
            Some(4) => ("satisfied with the result".to_owned(), UserDecision::FinishTask),
            Some(5) => ("let the agent proceed".to_owned(), UserDecision::DoNothing),
            Some(_) | None => ("format fallback".to_owned(), UserDecision::DoNothing),
        };

        let entry = match &decision {
            UserDecision::AnswerQuestion(t) => format!("answered: {t}"),
            UserDecision::OfferFeedback(t) => format!("feedback: {t}"),
            UserDecision::TakeTaskAction(a) => format_env_action(a),
            UserDecision::FinishTask => "finish".to_owned(),
            UserDecision::DoNothing => "do_nothing".to_owned(),
        };
        self.action_history.push(entry);
        Ok(UserOutput { thought, decision, usage: Some(usage) })
    }
}

pub struct LlmRater {
    client: LlmClient,
}

impl LlmRater {
    pub fn new(settings: &LlmSettings) -> Result<Self, PolicyError> {
        Ok(Self { client: LlmClient::new(settings)? })
    }
}

impl Rater for LlmRater {
    /// Likert rating from the model; after a failed reprompt the round is
    /// scored neutral (3) rather than aborting the episode.
    fn rate(&mut self, ctx: &RaterContext) -> Result<RatingOutput, PolicyError> {
        let mut usage = TokenUsage { prompt_tokens: 0, completion_tokens: 0 };
        let prompt = template::rater().render(&[("rating", "")])?;
        let tail_start = ctx.chat.len().saturating_sub(6);
        let transcript = render_chat(&ctx.chat[tail_start..]);
        let full = format!(
            "{prompt}\n\nRECENT CHAT:\n{transcript}\n\nCURRENT OBSERVATION:\n{}",
            ctx.observation
        );
        let mut messages = vec![ChatMessageWire::user(full)];
        for nudge in [false, true] {
            if nudge {
                messages.push(ChatMessageWire::user(
                    "Reply with a single number among 1/2/3/4/5.".to_owned(),
                ));
            }
            let text = ask(&self.client, &mut messages, &mut usage)?;
            if let Ok(rating) = parse_rating(&text) {
                return Ok(RatingOutput { rating, usage: Some(usage) });
            }
        }
        Ok(RatingOutput { rating: 3, usage: Some(usage) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{load_tasks, Catalog, PlanDocument, TaskInstance, EXAMPLE_TASKS_JSON};
    use crate::policy::AgentTaskView;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    enum StubReply {
        Ok(&'static str),
        OkUsage(&'static str, u64, u64),
        Status(u16),
        Malformed,
    }

    struct StubServer {
        endpoint: String,
        bodies: Arc<Mutex<Vec<String>>>,
        hits: Arc<AtomicUsize>,
    }

    fn serve(replies: Vec<StubReply>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies_in = Arc::clone(&bodies);
        let hits_in = Arc::clone(&hits);
        std::thread::spawn(move || {
            for reply in replies {
                let (stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                hits_in.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty()
                    {
                        break;
                    }
                    let lower = line.to_lowercase();
                    if let Some(rest) = lower.strip_prefix("content-length:") {
                        content_length = rest.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; content_length];
                let _ = reader.read_exact(&mut body);
                bodies_in.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                let response = match reply {
                    StubReply::Ok(content) => completion_response(content, 11, 7),
                    StubReply::OkUsage(content, p, c) => completion_response(content, p, c),
                    StubReply::Status(code) => format!(
                        "HTTP/1.1 {code} Error\r\nConnection: close\r\nContent-Length: 0\r\n\r\n"
                    ),
                    StubReply::Malformed => {
                        let body = "not json at all";
                        format!(
                            "HTTP/1.1 200 OK\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
                            body.len()
                        )
                    }
                };
                let mut stream = reader.into_inner();
                let _ = stream.write_all(response.as_bytes());
            }
        });
        StubServer { endpoint, bodies, hits }
    }

    fn completion_response(content: &str, prompt: u64, completion: u64) -> String {
        let body = serde_json::json!({
            "id": "stub",
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": prompt, "completion_tokens": completion},
        })
        .to_string();
        format!(
            "HTTP/1.1 200 OK\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        )
    }

    fn settings(server: &StubServer, key_var: &str) -> LlmSettings {
        std::env::set_var(key_var, "test-key");
        LlmSettings {
            endpoint: server.endpoint.clone(),
            model: "stub-model".to_owned(),
            api_key_env: key_var.to_owned(),
            temperature: 0.0,
            max_attempts: 3,
            backoff_ms: 1,
        }
    }

    fn one_message() -> Vec<ChatMessageWire> {
        vec![ChatMessageWire::user("hello")]
    }

    #[test]
    fn echoes_completion_and_usage() {
        let server = serve(vec![StubReply::OkUsage("echo text", 123, 45)]);
        let client = LlmClient::new(&settings(&server, "LLM_TEST_KEY_ECHO")).unwrap();
        let done = client.complete_chat(&one_message()).unwrap();
        assert_eq!(done.content, "echo text");
        assert_eq!(done.prompt_tokens, 123);
        assert_eq!(done.completion_tokens, 45);
        let bodies = server.bodies.lock().unwrap();
        assert!(bodies[0].contains("\"model\":\"stub-model\""));
        assert!(bodies[0].contains("\"temperature\":0.0"));
    }

    #[test]
    fn retries_server_errors_until_success() {
        let server = serve(vec![
            StubReply::Status(500),
            StubReply::Status(503),
            StubReply::Ok("third time lucky"),
        ]);
        let client = LlmClient::new(&settings(&server, "LLM_TEST_KEY_RETRY")).unwrap();
        let done = client.complete_chat(&one_message()).unwrap();
        assert_eq!(done.content, "third time lucky");
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let server = serve(vec![
            StubReply::Status(500),
            StubReply::Status(500),
            StubReply::Status(500),
        ]);
        let client = LlmClient::new(&settings(&server, "LLM_TEST_KEY_EXHAUST")).unwrap();
        let err = client.complete_chat(&one_message()).unwrap_err();
        assert!(matches!(err, PolicyError::Transport { .. }), "got {err:?}");
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_body_is_a_protocol_error_without_retry() {
        let server = serve(vec![StubReply::Malformed]);
        let client = LlmClient::new(&settings(&server, "LLM_TEST_KEY_MALFORMED")).unwrap();
        let err = client.complete_chat(&one_message()).unwrap_err();
        assert!(matches!(err, PolicyError::Protocol { .. }), "got {err:?}");
        assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn client_errors_are_protocol_errors_without_retry() {
        let server = serve(vec![StubReply::Status(401)]);
        let client = LlmClient::new(&settings(&server, "LLM_TEST_KEY_AUTH")).unwrap();
        let err = client.complete_chat(&one_message()).unwrap_err();
        assert!(matches!(err, PolicyError::Protocol { .. }), "got {err:?}");
        assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_api_key_fails_at_construction() {
        let server = serve(vec![]);
        let mut bad = settings(&server, "LLM_TEST_KEY_PRESENT");
        bad.api_key_env = "LLM_TEST_KEY_DEFINITELY_UNSET".to_owned();
        std::env::remove_var("LLM_TEST_KEY_DEFINITELY_UNSET");
        let err = LlmClient::new(&bad).unwrap_err();
        assert!(
            matches!(err, PolicyError::MissingApiKey { var } if var == "LLM_TEST_KEY_DEFINITELY_UNSET")
        );
    }

    fn agent_fixture() -> (TaskInstance, PlanDocument, String) {
        let task = load_tasks(EXAMPLE_TASKS_JSON, Catalog::builtin()).unwrap().into_iter().next().unwrap();
        let plan = PlanDocument::empty();
        let observation = crate::env::render_plan(&plan);
        (task, plan, observation)
    }

    #[test]
    fn one_stage_agent_takes_a_parsed_message() {
        let server = serve(vec![StubReply::OkUsage("Thought: ask\nMessage: hi there", 50, 9)]);
        let mut agent = LlmAgent::new(
            &settings(&server, "LLM_TEST_KEY_ONESTAGE"),
            AgentMode::OneStage,
        )
        .unwrap();
        let (task, plan, observation) = agent_fixture();
        let ctx = AgentContext {
            task: AgentTaskView::of(&task),
            catalog: Catalog::builtin(),
            plan: &plan,
            observation: &observation,
            chat: &[],
            round: 1,
        };
        let output = agent.decide(&ctx).unwrap();
        assert_eq!(output.thought, "ask");
        assert_eq!(output.decision, AgentDecision::SendMessage("hi there".to_owned()));
        assert_eq!(
            output.usage,
            Some(TokenUsage { prompt_tokens: 50, completion_tokens: 9 })
        );
        // The request should carry the rendered system prompt with the task.
        let bodies = server.bodies.lock().unwrap();
        assert!(bodies[0].contains("5-day travel itinerary"));
    }

    #[test]
    fn agent_reprompts_once_then_falls_back_to_do_nothing() {
        let server = serve(vec![StubReply::Ok("garbage"), StubReply::Ok("more garbage")]);
        let mut agent = LlmAgent::new(
            &settings(&server, "LLM_TEST_KEY_REPROMPT"),
            AgentMode::OneStage,
        )
        .unwrap();
        let (task, plan, observation) = agent_fixture();
        let ctx = AgentContext {
            task: AgentTaskView::of(&task),
            catalog: Catalog::builtin(),
            plan: &plan,
            observation: &observation,
            chat: &[],
            round: 1,
        };
        let output = agent.decide(&ctx).unwrap();
        assert_eq!(output.decision, AgentDecision::DoNothing);
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);
        let bodies = server.bodies.lock().unwrap();
        assert!(bodies[1].contains("did not match the required output format"));
    }

    #[test]
    fn two_stage_agent_chains_plan_and_message_calls() {
        let server = serve(vec![
            StubReply::OkUsage("Thought: I need info\nPlan: 1. Send a message", 30, 5),
            StubReply::OkUsage("Thought: asking now\nMessage: how many people?", 40, 6),
        ]);
        let mut agent = LlmAgent::new(
            &settings(&server, "LLM_TEST_KEY_TWOSTAGE"),
            AgentMode::TwoStage,
        )
        .unwrap();
        let (task, plan, observation) = agent_fixture();
        let ctx = AgentContext {
            task: AgentTaskView::of(&task),
            catalog: Catalog::builtin(),
            plan: &plan,
            observation: &observation,
            chat: &[],
            round: 1,
        };
        let output = agent.decide(&ctx).unwrap();
        assert_eq!(
            output.decision,
            AgentDecision::SendMessage("how many people?".to_owned())
        );
        assert_eq!(
            output.usage,
            Some(TokenUsage { prompt_tokens: 70, completion_tokens: 11 })
        );
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn auto_agent_rejects_messages_and_accepts_actions() {
        let server = serve(vec![
            StubReply::Ok("Thought: chat\nMessage: hello?"),
            StubReply::Ok("Thought: ok\nAction: finish"),
        ]);
        let mut agent =
            LlmAgent::new(&settings(&server, "LLM_TEST_KEY_AUTO"), AgentMode::Auto).unwrap();
        let (task, plan, observation) = agent_fixture();
        let ctx = AgentContext {
            task: AgentTaskView::of(&task),
            catalog: Catalog::builtin(),
            plan: &plan,
            observation: &observation,
            chat: &[],
            round: 1,
        };
        let output = agent.decide(&ctx).unwrap();
        assert_eq!(output.decision, AgentDecision::Finish);
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn llm_user_answers_via_the_two_call_flow() {
        let server = serve(vec![
            StubReply::Ok("1"),
            StubReply::Ok("We are two people traveling."),
        ]);
        let mut user = LlmUser::new(&settings(&server, "LLM_TEST_KEY_USER")).unwrap();
        let task = load_tasks(EXAMPLE_TASKS_JSON, Catalog::builtin()).unwrap().into_iter().next().unwrap();
        let plan = PlanDocument::empty();
        let observation = crate::env::render_plan(&plan);
        let chat = vec![ChatEntry {
            index: 0,
            actor: ActorId::Agent,
            content: "How many people are traveling?".to_owned(),
        }];
        let ctx = UserContext {
            task: &task,
            catalog: Catalog::builtin(),
            plan: &plan,
            observation: &observation,
            chat: &chat,
            round: 2,
        };
        let output = user.decide(&ctx).unwrap();
        assert_eq!(
            output.decision,
            UserDecision::AnswerQuestion("We are two people traveling.".to_owned())
        );
        // The decide prompt must carry the hidden constraints as private
        // knowledge for the simulated user.
        let bodies = server.bodies.lock().unwrap();
        assert!(bodies[0].contains("Travel for 2 people"));
    }

    #[test]
    fn llm_rater_parses_a_rating_and_falls_back_to_neutral() {
        let server = serve(vec![StubReply::Ok("4\nSolid progress.")]);
        let mut rater = LlmRater::new(&settings(&server, "LLM_TEST_KEY_RATER")).unwrap();
        let ctx = RaterContext {
            delta: 0.1,
            round_kind: crate::policy::RoundKind::Work,
            round: 2,
            chat: &[],
            observation: "PLAN: (empty)",
        };
        assert_eq!(rater.rate(&ctx).unwrap().rating, 4);

        let server = serve(vec![StubReply::Ok("no idea"), StubReply::Ok("still none")]);
        let mut rater = LlmRater::new(&settings(&server, "LLM_TEST_KEY_RATER2")).unwrap();
        let fallback = rater.rate(&ctx).unwrap();
        assert_eq!(fallback.rating, 3);
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn request_gate_permits_and_releases() {
        assert!(set_global_request_cap(2));
        assert!(!set_global_request_cap(5), "second install must be rejected");
        let a = acquire_permit().expect("gate installed");
        let b = acquire_permit().expect("two permits fit");
        drop(a);
        let c = acquire_permit().expect("released permit is reusable");
        drop(b);
        drop(c);
    }
}
