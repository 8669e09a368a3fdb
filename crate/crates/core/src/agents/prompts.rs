//! Prompt templates and context rendering.
//!
//! Templates are editable text files with named `{placeholder}` slots. The
//! crate ships defaults; a run may point at its own template directory.
//! Every required placeholder must be present or startup fails.

use std::collections::BTreeMap;
use std::path::Path;

use super::AgentError;
use crate::eval::MetricsReport;
use crate::kb::{Idea, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    FeatureProposer,
    IdeaSynthesizer,
    IdeaCreator,
    CodeAgent,
    IdeaCritic,
    CodeCritic,
    ShortTermMemory,
    EvaluateAgent,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::FeatureProposer,
        Role::IdeaSynthesizer,
        Role::IdeaCreator,
        Role::CodeAgent,
        Role::IdeaCritic,
        Role::CodeCritic,
        Role::ShortTermMemory,
        Role::EvaluateAgent,
    ];

    /// Directory name under a scripted provider and transcript label.
    pub fn tag(self) -> &'static str {
        match self {
            Role::FeatureProposer => "feature_proposer",
            Role::IdeaSynthesizer => "idea_synthesizer",
            Role::IdeaCreator => "idea_creator",
            Role::CodeAgent => "code_agent",
            Role::IdeaCritic => "idea_critic",
            Role::CodeCritic => "code_critic",
            Role::ShortTermMemory => "short_term_memory",
            Role::EvaluateAgent => "evaluate_agent",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Role::FeatureProposer => &[
                "{schema}",
                "{idea}",
                "{short_memory}",
                "{long_memory}",
                "{grammar}",
                "{feedback}",
            ],
            Role::IdeaSynthesizer | Role::IdeaCreator => &[
                "{schema}",
                "{knowledge_base}",
                "{long_memory}",
                "{feedback}",
            ],
            Role::CodeAgent => &[
                "{schema}",
                "{feature}",
                "{prior_program}",
                "{exemplars}",
                "{grammar}",
                "{feedback}",
            ],
            Role::IdeaCritic => &["{schema}", "{knowledge_base}", "{artifact}"],
            Role::CodeCritic => &["{schema}", "{feature}", "{parse_check}", "{artifact}"],
            Role::ShortTermMemory => &["{idea}", "{neighbors}"],
            Role::EvaluateAgent => &[
                "{idea}",
                "{feature}",
                "{metrics}",
                "{score}",
                "{long_memory}",
            ],
        }
    }

    fn default_template(self) -> &'static str {
        match self {
            Role::FeatureProposer => include_str!("../../prompts/feature_proposer.txt"),
            Role::IdeaSynthesizer => include_str!("../../prompts/idea_synthesizer.txt"),
            Role::IdeaCreator => include_str!("../../prompts/idea_creator.txt"),
            Role::CodeAgent => include_str!("../../prompts/code_agent.txt"),
            Role::IdeaCritic => include_str!("../../prompts/idea_critic.txt"),
            Role::CodeCritic => include_str!("../../prompts/code_critic.txt"),
            Role::ShortTermMemory => include_str!("../../prompts/short_term_memory.txt"),
            Role::EvaluateAgent => include_str!("../../prompts/evaluate_agent.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<Role, String>,
}

impl PromptSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let templates = Role::ALL
            .iter()
            .map(|r| (*r, r.default_template().to_string()))
            .collect();
        let set = PromptSet { templates };
        set.validate().expect("builtin templates are well-formed");
        set
    }

    /// Loads `<dir>/<role_tag>.txt` for every role.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        let mut templates = BTreeMap::new();
        for role in Role::ALL {
            let path = dir.join(format!("{}.txt", role.tag()));
            let text = std::fs::read_to_string(&path).map_err(|e| {
                AgentError::Config(format!(
                    "cannot read prompt template {}: {e}",
                    path.display()
                ))
            })?;
            templates.insert(role, text);
        }
        let set = PromptSet { templates };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        for role in Role::ALL {
            let template = self.templates.get(&role).ok_or_else(|| {
                AgentError::Config(format!("missing template for {}", role.tag()))
            })?;
            for ph in role.required_placeholders() {
                if !template.contains(ph) {
                    return Err(AgentError::Config(format!(
                        "template {} is missing the required placeholder {ph}",
                        role.tag()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Substitutes `slots` into the role template. Placeholders are exact
    /// `{name}` strings, so braces inside rendered content are inert.
    pub fn render(&self, role: Role, slots: &[(&str, &str)]) -> String {
        let mut text = self.templates[&role].clone();
        for (name, value) in slots {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        text
    }
}

// ---------------------------------------------------------------------------
// Context renderers
// ---------------------------------------------------------------------------

/// One idea with its accepted and rejected feature summaries.
pub fn render_idea(idea: &Idea) -> String {
    let mut out = format!(
        "[id {}] {}\n  origin: {:?}, visits: {}, cumulative score: {:+.6}\n",
        idea.id, idea.insight, idea.origin, idea.visit_count, idea.cumulative_score
    );
    let accepted = idea.accepted_features();
    out.push_str("  accepted features:\n");
    if accepted.is_empty() {
        out.push_str("    (none)\n");
    }
    for f in accepted {
        out.push_str(&format!(
            "    + {} (score {:+.6}): {}\n",
            f.name,
            f.score.unwrap_or(0.0),
            f.summary
        ));
    }
    let rejected = idea.rejected_features();
    out.push_str("  rejected features:\n");
    if rejected.is_empty() {
        out.push_str("    (none)\n");
    }
    for f in rejected {
        out.push_str(&format!(
            "    - {} (score {:+.6}): {}\n",
            f.name,
            f.score.unwrap_or(0.0),
            f.summary
        ));
    }
    out
}

/// Every idea with its bandit statistics, one block per idea.
pub fn render_knowledge_base(kb: &KnowledgeBase) -> String {
    if kb.is_empty() {
        return "(the knowledge base is empty)".to_string();
    }
    let mut out = format!("total visits: {}\n", kb.total_visits());
    for idea in kb.ideas() {
        out.push_str(&format!(
            "- [id {}] visits={} cumulative_score={:+.6} origin={:?} insight: {}\n",
            idea.id, idea.visit_count, idea.cumulative_score, idea.origin, idea.insight
        ));
    }
    out
}

/// Neighbor blocks for the short-term memory builder: insight plus
/// positive and negative feature lists.
pub fn render_neighbors(neighbors: &[&Idea]) -> String {
    if neighbors.is_empty() {
        return "(no neighbors)".to_string();
    }
    neighbors
        .iter()
        .map(|n| render_idea(n))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_feature_proposal(p: &super::parse::FeatureProposal) -> String {
    format!(
        "name: {}\nreason: {}\nsummary: {}\npseudocode:\n{}",
        p.name, p.reason, p.summary, p.pseudocode
    )
}

pub fn render_metrics(m: &MetricsReport) -> String {
    format!(
        "accuracy={:.6} precision={:.6} recall={:.6} f1={:.6} auc={:.6}",
        m.accuracy, m.precision, m.recall, m.f1, m.auc
    )
}

/// Up to `k` top-scoring accepted features across the whole knowledge
/// base, used as few-shot guidance for the code agent.
pub fn render_exemplars(kb: &KnowledgeBase, k: usize) -> String {
    let mut best: Vec<(f64, String)> = Vec::new();
    for idea in kb.ideas() {
        for f in idea.accepted_features() {
            if let (Some(score), Some(fragment)) = (f.score, &f.program_fragment) {
                best.push((
                    score,
                    format!("# {} (score {:+.6})\n{}", f.summary, score, fragment),
                ));
            }
        }
    }
    if best.is_empty() {
        return "(no accepted implementations yet)".to_string();
    }
    best.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    best.into_iter()
        .take(k)
        .map(|(_, s)| s)
        .collect::<Vec<_>>()
        .join("\n")
}
