//! Persisted run state: iteration records plus everything needed to
//! resume deterministically (RNG position, provider ordinals, per-idea
//! metric cache, best-so-far).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::Critique;
use crate::bandit::IdeaAction;
use crate::eval::MetricsReport;
use crate::kb::{FeatureId, IdeaId};
use crate::orchestrator::RunError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    ForfeitedIdea,
    ForfeitedCode,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub action: IdeaAction,
    pub idea_id: Option<IdeaId>,
    pub feature_id: Option<FeatureId>,
    pub feature_name: Option<String>,
    pub program: Option<String>,
    pub critiques: Vec<Critique>,
    pub metrics: Option<MetricsReport>,
    pub score: Option<Scalar>,
    pub outcome: Outcome,
    /// Execution/evaluation failure detail for `Outcome::Error`.
    pub error: Option<String>,
}

impl IterationRecord {
    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("record serializes"),
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::State(format!("corrupt record {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub metric: Scalar,
    pub idea_id: Option<IdeaId>,
    pub program: String,
    /// Run-dir-relative path of the feature table backing the metric.
    pub features_ref: Option<String>,
}

/// The `state.json` document. The knowledge base, long-term memory text
/// and embedding index live in their own files next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedState {
    pub completed_iterations: u32,
    pub rng_word_pos: u128,
    pub role_ordinals: BTreeMap<String, u32>,
    pub baseline_metric: Scalar,
    pub baseline_report: MetricsReport,
    pub idea_metrics: BTreeMap<IdeaId, Scalar>,
    pub best: BestSoFar,
    pub long_term_updated_at: u32,
}

impl PersistedState {
    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("state serializes"),
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::State(format!("cannot read state {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::State(format!("corrupt state {}: {e}", path.display())))
    }
}
