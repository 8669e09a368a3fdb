//! The two-layer knowledge base: ideas (islands) and their feature
//! implementations (populations), with visit counts, scores and provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub type IdeaId = u32;
pub type FeatureId = u32;

const SCORE_SUM_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("provenance error: {0}")]
    Provenance(String),
    #[error("state error: {0}")]
    State(String),
    #[error("corrupt state: {0}")]
    CorruptState(String),
    #[error("unknown idea id {0}")]
    UnknownIdea(IdeaId),
    #[error("unknown feature id {0}")]
    UnknownFeature(FeatureId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdeaOrigin {
    Prior,
    Synthesized,
    Created,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureStatus {
    Pending,
    Accepted,
    Rejected,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImpl {
    pub id: FeatureId,
    pub name: String,
    pub reason: String,
    pub summary: String,
    pub pseudocode: String,
    pub status: FeatureStatus,
    pub score: Option<f64>,
    pub iteration: u32,
    pub program_fragment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Idea {
    pub id: IdeaId,
    pub insight: String,
    pub origin: IdeaOrigin,
    pub parent_ids: Vec<IdeaId>,
    pub visit_count: u32,
    pub cumulative_score: f64,
    pub created_at_iteration: u32,
    pub features: Vec<FeatureImpl>,
}

impl Idea {
    /// Accepted features in insertion order; their fragments concatenate
    /// into the idea's current program.
    pub fn accepted_features(&self) -> Vec<&FeatureImpl> {
        self.features
            .iter()
            .filter(|f| f.status == FeatureStatus::Accepted)
            .collect()
    }

    pub fn rejected_features(&self) -> Vec<&FeatureImpl> {
        self.features
            .iter()
            .filter(|f| f.status == FeatureStatus::Rejected)
            .collect()
    }

    pub fn feature(&self, id: FeatureId) -> Option<&FeatureImpl> {
        self.features.iter().find(|f| f.id == id)
    }
}

/// Serialized shape of `knowledge_base.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KbFile {
    total_visits: u64,
    ideas: Vec<Idea>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    ideas: Vec<Idea>,
    total_visits: u64,
    next_feature_id: FeatureId,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ideas(&self) -> &[Idea] {
        &self.ideas
    }

    pub fn len(&self) -> usize {
        self.ideas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ideas.is_empty()
    }

    pub fn total_visits(&self) -> u64 {
        self.total_visits
    }

    pub fn idea(&self, id: IdeaId) -> Result<&Idea, KbError> {
        self.ideas.get(id as usize).ok_or(KbError::UnknownIdea(id))
    }

    fn idea_mut(&mut self, id: IdeaId) -> Result<&mut Idea, KbError> {
        self.ideas
            .get_mut(id as usize)
            .ok_or(KbError::UnknownIdea(id))
    }

    /// Appends an idea and returns its id. Synthesized ideas must cite at
    /// least two distinct existing parents; other origins cite none.
    pub fn add_idea(
        &mut self,
        insight: &str,
        origin: IdeaOrigin,
        parent_ids: &[IdeaId],
        iteration: u32,
    ) -> Result<IdeaId, KbError> {
        if insight.trim().is_empty() {
            return Err(KbError::Provenance("idea insight must be nonempty".into()));
        }
        let id = self.ideas.len() as IdeaId;
        match origin {
            IdeaOrigin::Synthesized => {
                if parent_ids.len() < 2 {
                    return Err(KbError::Provenance(
                        "synthesized ideas need at least 2 parents".into(),
                    ));
                }
                let mut seen = std::collections::BTreeSet::new();
                for &p in parent_ids {
                    if p >= id {
                        return Err(KbError::Provenance(format!(
                            "parent {p} does not precede new idea {id}"
                        )));
                    }
                    if !seen.insert(p) {
                        return Err(KbError::Provenance(format!("duplicate parent {p}")));
                    }
                }
            }
            _ => {
                if !parent_ids.is_empty() {
                    return Err(KbError::Provenance(format!(
                        "{origin:?} ideas must not cite parents"
                    )));
                }
            }
        }
        self.ideas.push(Idea {
            id,
            insight: insight.to_string(),
            origin,
            parent_ids: parent_ids.to_vec(),
            visit_count: 0,
            cumulative_score: 0.0,
            created_at_iteration: iteration,
            features: Vec::new(),
        });
        Ok(id)
    }

    /// Registers a pending feature implementation under an idea.
    pub fn add_feature(
        &mut self,
        idea_id: IdeaId,
        name: &str,
        reason: &str,
        summary: &str,
        pseudocode: &str,
        iteration: u32,
    ) -> Result<FeatureId, KbError> {
        if !crate::dsl::is_valid_identifier(name) {
            return Err(KbError::State(format!(
                "{name:?} is not a valid feature identifier"
            )));
        }
        let next_id = self.next_feature_id;
        let idea = self.idea_mut(idea_id)?;
        if idea.features.iter().any(|f| f.name == name) {
            return Err(KbError::State(format!(
                "feature name {name:?} already exists in idea {idea_id}"
            )));
        }
        idea.features.push(FeatureImpl {
            id: next_id,
            name: name.to_string(),
            reason: reason.to_string(),
            summary: summary.to_string(),
            pseudocode: pseudocode.to_string(),
            status: FeatureStatus::Pending,
            score: None,
            iteration,
            program_fragment: None,
        });
        self.next_feature_id += 1;
        Ok(next_id)
    }

    pub fn set_program_fragment(
        &mut self,
        idea_id: IdeaId,
        feature_id: FeatureId,
        fragment: &str,
    ) -> Result<(), KbError> {
        let idea = self.idea_mut(idea_id)?;
        let feat = idea
            .features
            .iter_mut()
            .find(|f| f.id == feature_id)
            .ok_or(KbError::UnknownFeature(feature_id))?;
        feat.program_fragment = Some(fragment.to_string());
        Ok(())
    }

    /// Applies an evaluation outcome to a pending feature: a strictly
    /// positive score accepts, anything else rejects. Updates the idea's
    /// visit count, its cumulative score and the global visit total.
    pub fn record_outcome(
        &mut self,
        idea_id: IdeaId,
        feature_id: FeatureId,
        score: f64,
    ) -> Result<FeatureStatus, KbError> {
        let idea = self.idea_mut(idea_id)?;
        let feat = idea
            .features
            .iter_mut()
            .find(|f| f.id == feature_id)
            .ok_or(KbError::UnknownFeature(feature_id))?;
        if feat.status != FeatureStatus::Pending {
            return Err(KbError::State(format!(
                "feature {feature_id} is {:?}, not pending",
                feat.status
            )));
        }
        let status = if score > 0.0 {
            FeatureStatus::Accepted
        } else {
            FeatureStatus::Rejected
        };
        feat.status = status;
        feat.score = Some(score);
        idea.visit_count += 1;
        idea.cumulative_score += score;
        self.total_visits += 1;
        Ok(status)
    }

    /// Marks a pending feature as failed (critic forfeit or execution
    /// error). Failed features carry no score and no visit.
    pub fn mark_failed(&mut self, idea_id: IdeaId, feature_id: FeatureId) -> Result<(), KbError> {
        let idea = self.idea_mut(idea_id)?;
        let feat = idea
            .features
            .iter_mut()
            .find(|f| f.id == feature_id)
            .ok_or(KbError::UnknownFeature(feature_id))?;
        if feat.status != FeatureStatus::Pending {
            return Err(KbError::State(format!(
                "feature {feature_id} is {:?}, not pending",
                feat.status
            )));
        }
        feat.status = FeatureStatus::Failed;
        Ok(())
    }

    /// The idea's accepted features in insertion order.
    pub fn accepted_program(&self, idea_id: IdeaId) -> Result<Vec<&FeatureImpl>, KbError> {
        Ok(self.idea(idea_id)?.accepted_features())
    }

    /// Concatenated program text of the idea's accepted fragments.
    pub fn accepted_program_text(&self, idea_id: IdeaId) -> Result<String, KbError> {
        let feats = self.accepted_program(idea_id)?;
        let parts: Vec<&str> = feats
            .iter()
            .filter_map(|f| f.program_fragment.as_deref())
            .map(str::trim)
            .collect();
        Ok(parts.join("\n"))
    }

    /// Checks every structural invariant; used after load and in tests.
    pub fn validate(&self) -> Result<(), KbError> {
        let mut total = 0u64;
        let mut seen_feature_ids = std::collections::BTreeSet::new();
        for (i, idea) in self.ideas.iter().enumerate() {
            if idea.id != i as IdeaId {
                return Err(KbError::CorruptState(format!(
                    "idea ids must be dense from 0; position {i} holds id {}",
                    idea.id
                )));
            }
            if idea.insight.trim().is_empty() {
                return Err(KbError::CorruptState(format!("idea {i} has empty insight")));
            }
            match idea.origin {
                IdeaOrigin::Synthesized if idea.parent_ids.len() < 2 => {
                    return Err(KbError::CorruptState(format!(
                        "synthesized idea {i} has fewer than 2 parents"
                    )))
                }
                IdeaOrigin::Prior | IdeaOrigin::Created if !idea.parent_ids.is_empty() => {
                    return Err(KbError::CorruptState(format!(
                        "idea {i} of origin {:?} cites parents",
                        idea.origin
                    )))
                }
                _ => {}
            }
            for &p in &idea.parent_ids {
                if p >= idea.id {
                    return Err(KbError::CorruptState(format!(
                        "idea {i} cites parent {p} that does not precede it"
                    )));
                }
            }
            let mut names = std::collections::BTreeSet::new();
            let mut visits = 0u32;
            let mut sum = 0.0f64;
            for f in &idea.features {
                if !seen_feature_ids.insert(f.id) {
                    return Err(KbError::CorruptState(format!(
                        "duplicate feature id {}",
                        f.id
                    )));
                }
                if !crate::dsl::is_valid_identifier(&f.name) {
                    return Err(KbError::CorruptState(format!(
                        "feature {} has invalid name {:?}",
                        f.id, f.name
                    )));
                }
                if !names.insert(f.name.as_str()) {
                    return Err(KbError::CorruptState(format!(
                        "duplicate feature name {:?} in idea {i}",
                        f.name
                    )));
                }
                match (f.status, f.score) {
                    (FeatureStatus::Accepted, Some(s)) if s > 0.0 => {}
                    (FeatureStatus::Rejected, Some(s)) if s <= 0.0 => {}
                    (FeatureStatus::Pending | FeatureStatus::Failed, None) => {}
                    _ => {
                        return Err(KbError::CorruptState(format!(
                            "feature {} has inconsistent status/score",
                            f.id
                        )))
                    }
                }
                if matches!(f.status, FeatureStatus::Accepted | FeatureStatus::Rejected) {
                    visits += 1;
                    sum += f.score.unwrap();
                }
            }
            if visits != idea.visit_count {
                return Err(KbError::CorruptState(format!(
                    "idea {i} visit_count {} != evaluated features {visits}",
                    idea.visit_count
                )));
            }
            if (sum - idea.cumulative_score).abs() > SCORE_SUM_TOL {
                return Err(KbError::CorruptState(format!(
                    "idea {i} cumulative_score {} != feature score sum {sum}",
                    idea.cumulative_score
                )));
            }
            total += visits as u64;
        }
        if total != self.total_visits {
            return Err(KbError::CorruptState(format!(
                "total_visits {} != sum of idea visit counts {total}",
                self.total_visits
            )));
        }
        if let Some(max) = seen_feature_ids.iter().max() {
            if *max >= self.next_feature_id {
                return Err(KbError::CorruptState(format!(
                    "next_feature_id {} not past max feature id {max}",
                    self.next_feature_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = KbFile {
            total_visits: self.total_visits,
            ideas: self.ideas.clone(),
        };
        serde_json::to_string_pretty(&file).expect("kb serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let file: KbFile = serde_json::from_str(text)
            .map_err(|e| KbError::CorruptState(format!("invalid knowledge base json: {e}")))?;
        let next_feature_id = file
            .ideas
            .iter()
            .flat_map(|i| i.features.iter())
            .map(|f| f.id + 1)
            .max()
            .unwrap_or(0);
        let kb = KnowledgeBase {
            ideas: file.ideas,
            total_visits: file.total_visits,
            next_feature_id,
        };
        kb.validate()?;
        Ok(kb)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        std::fs::write(path, self.to_json()).map_err(|e| KbError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|e| KbError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}
