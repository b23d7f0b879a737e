//! Run configuration shared by the CLI and the Python bindings.
//!
//! A run config is one TOML document selecting the task source, the episode
//! shape, the policy backends, and the output knobs. Parsing is strict:
//! unknown keys are rejected so typos fail loudly, and the task source must
//! name exactly one of a task file or a generator spec. API keys never
//! appear in the config; `[llm] api_key_env` names the environment variable
//! that holds one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EpisodeConfig, PolicySet, ProgressRule};
use crate::env::{
    generate_task_set, load_tasks, Catalog, CatalogError, TaskError, TaskInstance,
};
use crate::policy::{
    AgentMode, CollabMode, LlmAgent, LlmRater, LlmSettings, LlmUser, PolicyError,
    ScriptedAutoAgent, ScriptedCollabAgent, ScriptedRater, ScriptedUser,
};

/// Where episode tasks come from: a JSON file or the seeded generator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub seed: u64,
    pub count: usize,
}

/// Which backend fills a seat.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    #[default]
    Scripted,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub max_rounds: usize,
    /// Patience for the usability-drop metric: how many consecutive
    /// no-progress rounds a simulated stopper tolerates.
    pub tau: usize,
    /// Seed recorded in the manifest; task generation derives from
    /// `tasks.generate.seed`, not this.
    pub seed: u64,
    pub agent_mode: AgentMode,
    pub agent: PolicyChoice,
    pub user: PolicyChoice,
    pub rater: PolicyChoice,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            max_rounds: 30,
            tau: 1,
            seed: 0,
            agent_mode: AgentMode::OneStage,
            agent: PolicyChoice::Scripted,
            user: PolicyChoice::Scripted,
            rater: PolicyChoice::Scripted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Ratio bucket count for the bucketed-performance table.
    pub buckets: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { buckets: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog JSON path; the builtin catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    /// Worker count for batch runs; 0 picks the machine default.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub tasks: TaskSource,
    #[serde(default)]
    pub episode: EpisodeSection,
    #[serde(default)]
    pub progress: ProgressRule,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmSettings>,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("tasks: {0}")]
    Tasks(#[from] TaskError),
}

impl RunConfig {
    /// Parses and validates one TOML document. The underlying parse error
    /// carries line/column positions and the offending key.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match (&self.tasks.file, &self.tasks.generate) {
            (None, None) => {
                return Err(ConfigError::Invalid {
                    field: "tasks",
                    reason: "set exactly one of tasks.file or tasks.generate".to_owned(),
                })
            }
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid {
                    field: "tasks",
                    reason: "tasks.file and tasks.generate are mutually exclusive".to_owned(),
                })
            }
            _ => {}
        }
        if let Some(generate) = &self.tasks.generate {
            if generate.count == 0 {
                return Err(ConfigError::Invalid {
                    field: "tasks.generate.count",
                    reason: "must be at least 1".to_owned(),
                });
            }
        }
        if self.episode.max_rounds == 0 {
            return Err(ConfigError::Invalid {
                field: "episode.max_rounds",
                reason: "must be at least 1".to_owned(),
            });
        }
        if self.output.buckets == 0 {
            return Err(ConfigError::Invalid {
                field: "output.buckets",
                reason: "must be at least 1".to_owned(),
            });
        }
        if self.needs_llm() && self.llm.is_none() {
            return Err(ConfigError::Invalid {
                field: "llm",
                reason: "a seat selects the llm backend but the [llm] section is missing"
                    .to_owned(),
            });
        }
        Ok(())
    }

    fn needs_llm(&self) -> bool {
        [self.episode.agent, self.episode.user, self.episode.rater]
            .contains(&PolicyChoice::Llm)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_rounds: self.episode.max_rounds,
            agent_mode: self.episode.agent_mode,
            progress: self.progress,
        }
    }

    /// Seed recorded in the manifest: the generator seed when tasks are
    /// generated, the episode seed otherwise.
    pub fn manifest_seed(&self) -> u64 {
        self.tasks.generate.map_or(self.episode.seed, |g| g.seed)
    }

    pub fn load_catalog(&self) -> Result<Catalog, ConfigError> {
        match &self.catalog {
            Some(path) => Ok(Catalog::from_path(path)?),
            None => Ok(Catalog::builtin().clone()),
        }
    }

    pub fn load_tasks(&self, catalog: &Catalog) -> Result<Vec<TaskInstance>, ConfigError> {
        if let Some(path) = &self.tasks.file {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            return Ok(load_tasks(&text, catalog)?);
        }
        let generate = self.tasks.generate.expect("validated: one source is set");
        Ok(generate_task_set(generate.seed, generate.count, catalog)?)
    }

    /// Fails fast when an LLM seat is selected but its client cannot be
    /// built (missing API key env var, bad endpoint); callers get a crisp
    /// error before any episode starts.
    pub fn check_policies(&self) -> Result<(), PolicyError> {
        self.build_policies().map(|_| ())
    }

    /// Builds one fresh seat assignment. Batch runs call this once per
    /// episode so no policy state leaks between tasks.
    pub fn build_policies(&self) -> Result<PolicySet, PolicyError> {
        let mode = self.episode.agent_mode;
        let llm = |seat: &'static str| {
            self.llm.as_ref().ok_or_else(|| PolicyError::Protocol {
                reason: format!("{seat} seat selects the llm backend without [llm] settings"),
            })
        };
        let agent: Box<dyn crate::policy::AgentPolicy> = match self.episode.agent {
            PolicyChoice::Scripted => match mode {
                AgentMode::Auto => Box::new(ScriptedAutoAgent::default()),
                AgentMode::OneStage => Box::new(ScriptedCollabAgent::new(CollabMode::OneStage)),
                AgentMode::TwoStage => Box::new(ScriptedCollabAgent::new(CollabMode::TwoStage)),
            },
            PolicyChoice::Llm => Box::new(LlmAgent::new(llm("agent")?, mode)?),
        };
        let user: Box<dyn crate::policy::UserPolicy> = match self.episode.user {
            PolicyChoice::Scripted => Box::new(ScriptedUser::default()),
            PolicyChoice::Llm => Box::new(LlmUser::new(llm("user")?)?),
        };
        let rater: Box<dyn crate::policy::Rater> = match self.episode.rater {
            PolicyChoice::Scripted => Box::new(ScriptedRater::default()),
            PolicyChoice::Llm => Box::new(LlmRater::new(llm("rater")?)?),
        };
        Ok(PolicySet { agent, user, rater })
    }
}

/// Stable fingerprint of the raw config text, recorded in batch manifests.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
