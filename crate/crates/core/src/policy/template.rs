//! Prompt templates with a closed placeholder vocabulary and a registry of
//! built-in prompt texts shipped as plain-text assets.
//!
//! Rendering is a single pass over the template: bound values are inserted
//! literally, so a value containing "{name}" is never re-expanded.

use std::sync::LazyLock;

use regex::Regex;

use super::PolicyError;

/// Version string recorded into batch manifests; bump on any asset edit.
pub const PROMPT_ASSET_VERSION: &str = "1";

/// Every placeholder any template may use. Templates mentioning anything
/// else are rejected at construction.
pub const ALLOWED_PLACEHOLDERS: [&str; 12] = [
    "action_history",
    "action_space_description",
    "additional_info",
    "available_actions",
    "chat_history",
    "name",
    "observation",
    "rating",
    "rules",
    "scratchpad",
    "task_description",
    "team_members",
];

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("placeholder pattern compiles"));

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    text: String,
    placeholders: Vec<String>,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PolicyError> {
        let text = text.into();
        let mut placeholders: Vec<String> = Vec::new();
        for capture in PLACEHOLDER.captures_iter(&text) {
            let name = capture[1].to_owned();
            if !ALLOWED_PLACEHOLDERS.contains(&name.as_str()) {
                return Err(PolicyError::UnknownPlaceholder { name });
            }
            if !placeholders.contains(&name) {
                placeholders.push(name);
            }
        }
        Ok(Self { text, placeholders })
    }

    /// Distinct placeholders in order of first appearance.
    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes every placeholder from `bindings` in one pass. Every
    /// placeholder in the template must be bound; extra bindings are ignored.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PolicyError> {
        for needed in &self.placeholders {
            if !bindings.iter().any(|(k, _)| k == needed) {
                return Err(PolicyError::MissingPlaceholder { name: needed.clone() });
            }
        }
        let mut out = String::with_capacity(self.text.len());
        let mut last = 0;
        for m in PLACEHOLDER.captures_iter(&self.text) {
            let whole = m.get(0).unwrap();
            let name = &m[1];
            out.push_str(&self.text[last..whole.start()]);
            let value = bindings
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .expect("checked above");
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.text[last..]);
        Ok(out)
    }
}

macro_rules! builtin_template {
    ($fn_name:ident, $file:literal) => {
        pub fn $fn_name() -> &'static PromptTemplate {
            static T: LazyLock<PromptTemplate> = LazyLock::new(|| {
                PromptTemplate::new(include_str!(concat!("../../assets/prompts/", $file)))
                    .expect("bundled prompt asset uses only allowed placeholders")
            });
            &T
        }
    };
}

builtin_template!(agent_system_auto, "agent_system_auto.txt");
builtin_template!(agent_next_action, "agent_next_action.txt");
builtin_template!(agent_system_collab, "agent_system_collab.txt");
builtin_template!(agent_plan_stage, "agent_plan_stage.txt");
builtin_template!(agent_send_message, "agent_send_message.txt");
builtin_template!(user_decide, "user_decide.txt");
builtin_template!(user_answer, "user_answer.txt");
builtin_template!(user_feedback, "user_feedback.txt");
builtin_template!(user_task_action, "user_task_action.txt");
builtin_template!(rater, "rater.txt");
