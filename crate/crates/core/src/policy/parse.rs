//! Parsing and formatting of policy output text.
//!
//! The text grammar is line-marker based: an optional "Thought:" preamble
//! followed by exactly one of "Plan:", "Message:", or "Action:". Task
//! actions carry a keyword plus a JSON payload, so plan edits stay
//! structured all the way through an LLM round trip.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AgentDecision, PolicyError};
use crate::env::{EnvAction, PlanPatch, SearchQuery};

/// Payload of an agent reply: a stage-one plan digit, a chat message, or a
/// concrete task action.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedPayload {
    PlanChoice(u8),
    Message(String),
    Action(ParsedAction),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedAction {
    Edit(Vec<PlanPatch>),
    Search(SearchQuery),
    Finish,
    DoNothing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAgentOutput {
    pub thought: String,
    pub payload: ParsedPayload,
}

#[derive(Debug, Serialize, Deserialize)]
struct EditPayload {
    patches: Vec<PlanPatch>,
}

const MARKERS: [&str; 3] = ["Plan:", "Message:", "Action:"];

/// Finds the first line that opens with a marker, tolerating leading
/// whitespace: the documented format writes "\n Action:" with a space.
fn find_marker(text: &str) -> Option<(usize, &'static str)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_start();
        let indent = line.len() - content.len();
        for marker in MARKERS {
            if content.starts_with(marker) {
                return Some((offset + indent, marker));
            }
        }
        offset += line.len();
    }
    None
}

pub fn parse_agent_output(text: &str) -> Result<ParsedAgentOutput, PolicyError> {
    let fail = || PolicyError::ParseFailure { raw: text.to_owned() };
    let (marker_at, marker) = find_marker(text).ok_or_else(fail)?;
    let thought = text[..marker_at]
        .trim()
        .strip_prefix("Thought:")
        .map(str::trim)
        .unwrap_or_else(|| text[..marker_at].trim())
        .to_owned();
    let body = text[marker_at + marker.len()..].trim();
    let payload = match marker {
        "Plan:" => {
            let digit = body.chars().next().ok_or_else(fail)?;
            match digit {
                '1'..='3' => ParsedPayload::PlanChoice(digit as u8 - b'0'),
                _ => return Err(fail()),
            }
        }
        "Message:" => ParsedPayload::Message(body.to_owned()),
        "Action:" => ParsedPayload::Action(parse_action(body).ok_or_else(fail)?),
        _ => unreachable!("marker set is closed"),
    };
    Ok(ParsedAgentOutput { thought, payload })
}

fn parse_action(body: &str) -> Option<ParsedAction> {
    let (keyword, rest) = match body.find(char::is_whitespace) {
        Some(at) => (&body[..at], body[at..].trim()),
        None => (body, ""),
    };
    match keyword {
        "finish" if rest.is_empty() => Some(ParsedAction::Finish),
        "do_nothing" if rest.is_empty() => Some(ParsedAction::DoNothing),
        "edit_plan" => {
            let payload: EditPayload = serde_json::from_str(rest).ok()?;
            Some(ParsedAction::Edit(payload.patches))
        }
        "search_catalog" => {
            let query: SearchQuery = serde_json::from_str(rest).ok()?;
            Some(ParsedAction::Search(query))
        }
        _ => None,
    }
}

/// Stage-one digits: 1 = message path, 2 = action path, 3 = do nothing.
/// Only 3 is itself a final decision.
pub fn choice_to_decision(payload: &ParsedPayload) -> Option<AgentDecision> {
    match payload {
        ParsedPayload::PlanChoice(3) => Some(AgentDecision::DoNothing),
        ParsedPayload::PlanChoice(_) => None,
        ParsedPayload::Message(text) => Some(AgentDecision::SendMessage(text.clone())),
        ParsedPayload::Action(action) => Some(action_to_decision(action)),
    }
}

pub fn action_to_decision(action: &ParsedAction) -> AgentDecision {
    match action {
        ParsedAction::Edit(patches) => {
            AgentDecision::TakeTaskAction(EnvAction::EditPlan(patches.clone()))
        }
        ParsedAction::Search(query) => {
            AgentDecision::TakeTaskAction(EnvAction::SearchCatalog(query.clone()))
        }
        ParsedAction::Finish => AgentDecision::Finish,
        ParsedAction::DoNothing => AgentDecision::DoNothing,
    }
}

/// Canonical text for a task action; inverse of [`parse_action`].
pub fn format_env_action(action: &EnvAction) -> String {
    match action {
        EnvAction::EditPlan(patches) => {
            let payload = EditPayload { patches: patches.clone() };
            format!("edit_plan {}", serde_json::to_string(&payload).expect("patches serialize"))
        }
        EnvAction::SearchCatalog(query) => {
            format!("search_catalog {}", serde_json::to_string(query).expect("query serializes"))
        }
        EnvAction::Finish => "finish".to_owned(),
    }
}

/// Canonical text for a whole decision; inverse of [`parse_agent_output`]
/// composed with [`choice_to_decision`].
pub fn format_agent_output(thought: &str, decision: &AgentDecision) -> String {
    match decision {
        AgentDecision::TakeTaskAction(action) => {
            format!("Thought: {thought}\nAction: {}", format_env_action(action))
        }
        AgentDecision::SendMessage(text) => format!("Thought: {thought}\nMessage: {text}"),
        AgentDecision::DoNothing => format!("Thought: {thought}\nPlan: 3. Do nothing"),
        AgentDecision::Finish => format!("Thought: {thought}\nAction: finish"),
    }
}

static STANDALONE_DIGIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b([1-5])\b").expect("digit pattern compiles"));

/// First standalone digit 1..5; anything after a newline is an optional
/// explanation and never consulted once a digit is found.
pub fn parse_rating(text: &str) -> Result<u8, PolicyError> {
    STANDALONE_DIGIT
        .captures(text)
        .map(|c| c[1].as_bytes()[0] - b'0')
        .ok_or_else(|| PolicyError::ParseFailure { raw: text.to_owned() })
}

/// Menu choice 1..5 from the user-decision prompt; same surface grammar as
/// ratings (a bare digit, optionally followed by prose).
pub fn parse_choice(text: &str) -> Result<u8, PolicyError> {
    parse_rating(text)
}
