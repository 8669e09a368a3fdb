//! Run reporting: a per-iteration table for the terminal and a
//! `report.md` with the idea/feature tree and the score trajectory.

use std::path::Path;

use crate::kb::KnowledgeBase;
use crate::orchestrator::{IterationRecord, Outcome, PersistedState, RunError};

fn load_records(run_dir: &Path) -> Result<Vec<IterationRecord>, RunError> {
    let dir = run_dir.join("iterations");
    let mut ts: Vec<u32> = Vec::new();
    if dir.exists() {
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            if let Ok(t) = entry.file_name().to_string_lossy().parse::<u32>() {
                if entry.path().join("record.json").exists() {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_unstable();
    ts.iter()
        .map(|t| IterationRecord::load(&dir.join(t.to_string()).join("record.json")))
        .collect()
}

fn outcome_text(o: Outcome) -> &'static str {
    match o {
        Outcome::Accepted => "accepted",
        Outcome::Rejected => "rejected",
        Outcome::ForfeitedIdea => "forfeited_idea",
        Outcome::ForfeitedCode => "forfeited_code",
        Outcome::Error => "error",
    }
}

/// The per-iteration table printed by `report`.
pub fn report_table(run_dir: &Path) -> Result<String, RunError> {
    let records = load_records(run_dir)?;
    let state = PersistedState::load(&run_dir.join("state.json"))?;
    let mut out = String::new();
    out.push_str(&format!(
        "{:>4}  {:<16} {:>5} {:<24} {:<15} {:>10} {:>8}\n",
        "iter", "action", "idea", "feature", "outcome", "score", "auc"
    ));
    for r in &records {
        let action = format!("{:?}", r.action);
        out.push_str(&format!(
            "{:>4}  {:<16} {:>5} {:<24} {:<15} {:>10} {:>8}\n",
            r.iteration,
            action,
            r.idea_id
                .map(|i| i.to_string())
                .unwrap_or_else(|| "-".into()),
            r.feature_name.clone().unwrap_or_else(|| "-".into()),
            outcome_text(r.outcome),
            r.score
                .map(|s| format!("{s:+.4}"))
                .unwrap_or_else(|| "-".into()),
            r.metrics
                .map(|m| format!("{:.4}", m.auc))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    out.push_str(&format!(
        "\nbaseline auc {:.6} | best auc {:.6}{}\n",
        state.baseline_metric,
        state.best.metric,
        state
            .best
            .idea_id
            .map(|i| format!(" (idea {i})"))
            .unwrap_or_else(|| " (baseline)".into()),
    ));
    Ok(out)
}

/// Renders `report.md`: configuration echo, idea/feature tree, and the
/// cumulative best-metric trajectory.
pub fn render_report(run_dir: &Path) -> Result<String, RunError> {
    let records = load_records(run_dir)?;
    let state = PersistedState::load(&run_dir.join("state.json"))?;
    let kb = KnowledgeBase::load(&run_dir.join("knowledge_base.json"))
        .map_err(|e| RunError::State(e.to_string()))?;

    let mut md = String::from("# Run report\n\n");
    md.push_str(&format!(
        "- iterations completed: {}\n- baseline auc: {:.6}\n- best auc: {:.6}\n\n",
        state.completed_iterations, state.baseline_metric, state.best.metric
    ));

    md.push_str("## Idea and feature tree\n\n");
    for idea in kb.ideas() {
        let parents = if idea.parent_ids.is_empty() {
            String::new()
        } else {
            format!(" (parents: {:?})", idea.parent_ids)
        };
        md.push_str(&format!(
            "- **idea {}** [{:?}]{} visits={} cumulative={:+.6}\n  {}\n",
            idea.id, idea.origin, parents, idea.visit_count, idea.cumulative_score, idea.insight
        ));
        for f in &idea.features {
            let score = f
                .score
                .map(|s| format!("{s:+.6}"))
                .unwrap_or_else(|| "-".into());
            md.push_str(&format!(
                "  - `{}` [{:?}] score={} iter={}: {}\n",
                f.name, f.status, score, f.iteration, f.summary
            ));
        }
    }

    md.push_str("\n## Score trajectory\n\n");
    md.push_str("| iteration | outcome | score | best auc so far |\n");
    md.push_str("|---|---|---|---|\n");
    let mut best = state.baseline_metric;
    for r in &records {
        if r.outcome == Outcome::Accepted {
            if let Some(m) = &r.metrics {
                if m.auc > best {
                    best = m.auc;
                }
            }
        }
        md.push_str(&format!(
            "| {} | {} | {} | {best:.6} |\n",
            r.iteration,
            outcome_text(r.outcome),
            r.score
                .map(|s| format!("{s:+.6}"))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    Ok(md)
}

/// Writes `report.md` into the run directory and returns the table text.
pub fn write_report(run_dir: &Path) -> Result<String, RunError> {
    let md = render_report(run_dir)?;
    std::fs::write(run_dir.join("report.md"), md)?;
    report_table(run_dir)
}
