//! Relative scores, UCB idea selection, and the per-iteration action draw.
//!
//! Selection is UCB1 over ideas: `mean + c * sqrt(ln(total) / visits)`,
//! with unvisited ideas forced to positive infinity so that every island
//! gets evaluated once before any island is revisited.

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kb::{Idea, IdeaId, KnowledgeBase};

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum BanditError {
    #[error("empty knowledge base: no idea to select")]
    EmptyKnowledgeBase,
    #[error("invalid bandit config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ActionProbs {
    pub propose_feature: f64,
    pub synthesize: f64,
    pub create: f64,
}

impl Default for ActionProbs {
    fn default() -> Self {
        ActionProbs {
            propose_feature: 0.70,
            synthesize: 0.15,
            create: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BanditConfig {
    #[serde(default = "default_exploration_c")]
    pub exploration_c: f64,
    #[serde(default)]
    pub action_probs: ActionProbs,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_exploration_c() -> f64 {
    std::f64::consts::SQRT_2
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            exploration_c: default_exploration_c(),
            action_probs: ActionProbs::default(),
            rng_seed: 0,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<(), BanditError> {
        if !self.exploration_c.is_finite() || self.exploration_c < 0.0 {
            return Err(BanditError::Config(
                "exploration_c must be a finite value >= 0".into(),
            ));
        }
        let p = &self.action_probs;
        for (name, v) in [
            ("propose_feature", p.propose_feature),
            ("synthesize", p.synthesize),
            ("create", p.create),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(BanditError::Config(format!(
                    "action prob {name} must be >= 0"
                )));
            }
        }
        let sum = p.propose_feature + p.synthesize + p.create;
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(BanditError::Config(format!(
                "action probs sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdeaAction {
    ProposeFeature,
    Synthesize,
    Create,
}

/// The reward of one feature trial: the metric delta caused by adding the
/// feature to its idea's accepted set.
pub fn relative_score<F: Float>(metric_new: F, metric_prev: F) -> F {
    metric_new - metric_prev
}

/// UCB value of one idea given its cumulative score, its visit count and
/// the total visit count. Unvisited ideas score positive infinity.
pub fn ucb<F: Float>(cumulative_score: F, visit_count: u64, total_visits: u64, c: F) -> F {
    debug_assert!(total_visits >= visit_count);
    if visit_count == 0 {
        return F::infinity();
    }
    let q_i = F::from(visit_count).unwrap();
    let q = F::from(total_visits).unwrap();
    cumulative_score / q_i + c * (q.ln() / q_i).sqrt()
}

/// UCB of an idea snapshot against the knowledge base's visit total.
pub fn idea_ucb(idea: &Idea, total_visits: u64, c: f64) -> f64 {
    ucb(
        idea.cumulative_score,
        idea.visit_count as u64,
        total_visits,
        c,
    )
}

/// Returns the idea with the highest UCB; ties (including several
/// unvisited ideas at infinity) resolve to the smallest id.
pub fn select_idea(kb: &KnowledgeBase, config: &BanditConfig) -> Result<IdeaId, BanditError> {
    let mut best: Option<(IdeaId, f64)> = None;
    for idea in kb.ideas() {
        let v = idea_ucb(idea, kb.total_visits(), config.exploration_c);
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((idea.id, v)),
        }
    }
    best.map(|(id, _)| id)
        .ok_or(BanditError::EmptyKnowledgeBase)
}

/// Samples the next action from the configured distribution, consuming
/// exactly one uniform variate, then repairs infeasible draws: an empty
/// knowledge base forces `Create`, and `Synthesize` with fewer than two
/// ideas becomes `Create`.
pub fn choose_action<R: Rng>(kb: &KnowledgeBase, config: &BanditConfig, rng: &mut R) -> IdeaAction {
    let u: f64 = rng.gen();
    let p = &config.action_probs;
    let drawn = if u < p.propose_feature {
        IdeaAction::ProposeFeature
    } else if u < p.propose_feature + p.synthesize {
        IdeaAction::Synthesize
    } else {
        IdeaAction::Create
    };
    match drawn {
        _ if kb.is_empty() => IdeaAction::Create,
        IdeaAction::Synthesize if kb.len() < 2 => IdeaAction::Create,
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::IdeaOrigin;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_score_is_subtraction() {
        assert!((relative_score(0.701, 0.683) - 0.018).abs() < 1e-12);
        assert_eq!(relative_score(0.42, 0.42), 0.0);
        // Generic over the scalar type.
        assert!((relative_score(0.5f32, 0.25f32) - 0.25f32).abs() < 1e-6);
    }

    #[test]
    fn relative_score_matches_reported_improvement() {
        // AUC 0.653 against raw-feature AUC 0.630 is an improvement of 0.023.
        assert!((relative_score(0.653, 0.630) - 0.023).abs() < 1e-12);
    }

    #[test]
    fn unvisited_idea_is_infinite() {
        assert_eq!(ucb(0.0, 0, 0, 1.0), f64::INFINITY);
        assert_eq!(ucb(0.0, 0, 10, 1.0), f64::INFINITY);
    }

    #[test]
    fn single_visit_single_total_is_mean_only() {
        // ln(1) = 0, so the bonus vanishes.
        assert_eq!(ucb(0.0, 1, 1, 1.0), 0.0);
        assert!((ucb(0.2, 1, 1, 3.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn worked_ucb_value() {
        // 0.05/2 + sqrt(ln(10)/2)
        let v = ucb(0.05, 2, 10, 1.0);
        assert!((v - 1.0979830).abs() < 1e-6, "got {v}");
    }

    fn kb_with(n: usize) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        for i in 0..n {
            kb.add_idea(&format!("idea {i}"), IdeaOrigin::Prior, &[], 0)
                .unwrap();
        }
        kb
    }

    #[test]
    fn fresh_ideas_tie_break_on_smallest_id() {
        let kb = kb_with(2);
        assert_eq!(select_idea(&kb, &BanditConfig::default()).unwrap(), 0);
    }

    #[test]
    fn infinity_dominates_finite() {
        let mut kb = kb_with(2);
        let fid = kb.add_feature(0, "f_a", "r", "s", "p", 0).unwrap();
        kb.record_outcome(0, fid, 0.05).unwrap();
        let fid = kb.add_feature(0, "f_b", "r", "s", "p", 0).unwrap();
        kb.record_outcome(0, fid, 0.0).unwrap();
        // Idea 0 visited twice, idea 1 fresh.
        assert_eq!(select_idea(&kb, &BanditConfig::default()).unwrap(), 1);
    }

    #[test]
    fn empty_kb_select_errors() {
        let kb = KnowledgeBase::new();
        assert!(matches!(
            select_idea(&kb, &BanditConfig::default()),
            Err(BanditError::EmptyKnowledgeBase)
        ));
    }

    #[test]
    fn action_repair_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = KnowledgeBase::new();
        let cfg = BanditConfig::default();
        for _ in 0..20 {
            assert_eq!(choose_action(&empty, &cfg, &mut rng), IdeaAction::Create);
        }
        // One idea: synthesize draws repair to create.
        let one = kb_with(1);
        let all_synth = BanditConfig {
            action_probs: ActionProbs {
                propose_feature: 0.0,
                synthesize: 1.0,
                create: 0.0,
            },
            ..BanditConfig::default()
        };
        for _ in 0..20 {
            assert_eq!(
                choose_action(&one, &all_synth, &mut rng),
                IdeaAction::Create
            );
        }
        // Degenerate distribution always proposes once an idea exists.
        let all_prop = BanditConfig {
            action_probs: ActionProbs {
                propose_feature: 1.0,
                synthesize: 0.0,
                create: 0.0,
            },
            ..BanditConfig::default()
        };
        for _ in 0..20 {
            assert_eq!(
                choose_action(&one, &all_prop, &mut rng),
                IdeaAction::ProposeFeature
            );
        }
    }

    #[test]
    fn choose_action_consumes_one_variate() {
        let kb = kb_with(3);
        let cfg = BanditConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        choose_action(&kb, &cfg, &mut a);
        let _: f64 = b.gen();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn shift_invariance_of_argmax() {
        // Adding a constant to every mean shifts finite ucbs, not the winner.
        let mut kb = kb_with(3);
        for (i, s) in [(0u32, 0.02), (1, 0.07), (2, -0.01)] {
            let fid = kb.add_feature(i, "f_x", "r", "s", "p", 0).unwrap();
            kb.record_outcome(i, fid, s).unwrap();
        }
        let cfg = BanditConfig::default();
        let winner = select_idea(&kb, &cfg).unwrap();
        let delta = 0.37;
        let shifted: Vec<f64> = kb
            .ideas()
            .iter()
            .map(|i| idea_ucb(i, kb.total_visits(), cfg.exploration_c) + delta)
            .collect();
        let max_idx = shifted
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_idx as u32, winner);
    }

    #[test]
    fn unvisited_before_revisit() {
        // With rewards never recorded, each infinite idea is chosen before
        // any idea is revisited.
        let mut kb = kb_with(5);
        let cfg = BanditConfig::default();
        let mut picked = Vec::new();
        for round in 0..5 {
            let id = select_idea(&kb, &cfg).unwrap();
            assert!(!picked.contains(&id), "revisited {id} before coverage");
            picked.push(id);
            let fid = kb
                .add_feature(id, &format!("f_{round}"), "r", "s", "p", 0)
                .unwrap();
            kb.record_outcome(id, fid, 0.0).unwrap();
        }
        assert_eq!(picked.len(), 5);
    }
}
