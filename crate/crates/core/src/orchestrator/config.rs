//! Run configuration: the JSON document handed to `run --config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, PromptSet, ProviderConfig};
use crate::bandit::BanditConfig;
use crate::dataset::{DatasetError, SplitSpec};
use crate::dsl::RunnerConfig;
use crate::eval::LearnerConfig;
use crate::memory::MemoryConfig;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error("provider error: {0}")]
    Provider(AgentError),
    #[error("lock error: {0}")]
    Lock(String),
    #[error("state error: {0}")]
    State(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// CLI exit codes: 2 config, 3 dataset, 4 provider, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Dataset(_) => 3,
            RunError::Provider(_) => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub events_path: PathBuf,
    pub labels_path: PathBuf,
    pub schema_path: PathBuf,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum DslBackend {
    #[default]
    Builtin,
    External(RunnerConfig),
}

// No deny_unknown_fields here: it cannot coexist with the flattened
// backend tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DslConfig {
    #[serde(flatten)]
    pub backend: DslBackend,
    /// Anchor windows on each entity's last event instead of the global
    /// log maximum.
    #[serde(default)]
    pub per_entity_window_anchor: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_timeout_seconds: Option<u64>,
}

impl Default for DslConfig {
    fn default() -> Self {
        DslConfig {
            backend: DslBackend::Builtin,
            per_entity_window_anchor: false,
            workers: default_workers(),
            exec_timeout_seconds: None,
        }
    }
}

fn default_workers() -> usize {
    1
}

fn default_max_critic_iters() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub dsl: DslConfig,
    pub max_iterations: u32,
    /// Optional wall-clock budget; the run stops early once exceeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_clock_seconds: Option<u64>,
    #[serde(default = "default_max_critic_iters")]
    pub max_critic_iters: u32,
    #[serde(default)]
    pub memory: MemoryConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub prior_ideas: Vec<String>,
    /// Overrides the built-in prompt templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    // Ablation switches; recorded in the persisted config.
    #[serde(default)]
    pub disable_critics: bool,
    #[serde(default)]
    pub disable_memory: bool,
    #[serde(default)]
    pub disable_ucb: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.max_iterations < 1 {
            return Err(RunError::Config("max_iterations must be >= 1".into()));
        }
        if self.max_critic_iters < 1 {
            return Err(RunError::Config("max_critic_iters must be >= 1".into()));
        }
        self.bandit
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.learner
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.dataset
            .split
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if self.memory.dim == 0 || self.memory.max_chars == 0 {
            return Err(RunError::Config(
                "memory dim and max_chars must be positive".into(),
            ));
        }
        if self.dsl.workers == 0 {
            return Err(RunError::Config("dsl.workers must be >= 1".into()));
        }
        Ok(())
    }

    /// Loads the configured prompt templates (or the built-ins) and
    /// verifies every required placeholder, failing startup otherwise.
    pub fn load_prompts(&self) -> Result<PromptSet, RunError> {
        match &self.prompt_dir {
            Some(dir) => PromptSet::load_dir(dir).map_err(|e| RunError::Config(e.to_string())),
            None => Ok(PromptSet::builtin()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}
