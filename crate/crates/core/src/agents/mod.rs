//! LLM-backed roles and the bounded critic-refinement loop.
//!
//! All roles share one wire contract (a fenced json block with a think
//! trace and a typed payload, see [`parse`]) and one provider abstraction
//! (see [`provider`]). The operations here render prompts, call the
//! provider and validate the parsed payloads; orchestration decides how
//! they chain.

pub mod parse;
pub mod prompts;
pub mod provider;

pub use parse::{
    AgentOutput, CodeProposal, Critique, FeatureProposal, IdeaProposal, MemorySummary, OutputKind,
    ThinkTrace, Verdict,
};
pub use prompts::{PromptSet, Role};
pub use provider::{ChatMessage, Provider, ProviderConfig, TranscriptEntry};

use crate::dataset::DataSchema;
use crate::dsl;
use crate::eval::MetricsReport;
use crate::kb::{Idea, KnowledgeBase};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted provider exhausted: no transcript {ordinal} for role {role_tag}")]
    ScriptExhausted { role_tag: String, ordinal: u32 },
    #[error("output parse error: {0}")]
    OutputParse(String),
    #[error("agent config error: {0}")]
    Config(String),
}

fn feedback_text(feedback: Option<&str>) -> &str {
    match feedback {
        Some(f) if !f.is_empty() => f,
        _ => "(none)",
    }
}

fn complete_role(
    provider: &mut Provider,
    prompts: &PromptSet,
    role: Role,
    slots: &[(&str, &str)],
) -> Result<String, AgentError> {
    let prompt = prompts.render(role, slots);
    let messages = [ChatMessage::user(prompt)];
    provider.complete(&messages, role.tag())
}

/// Proposes one new feature implementation for an idea. A name that
/// collides with an existing feature of the idea is treated as a parse
/// failure so the refine loop can retry with feedback.
pub fn propose_feature(
    provider: &mut Provider,
    prompts: &PromptSet,
    idea: &Idea,
    schema: &DataSchema,
    short_memory: &str,
    long_memory: &str,
    feedback: Option<&str>,
) -> Result<FeatureProposal, AgentError> {
    let text = complete_role(
        provider,
        prompts,
        Role::FeatureProposer,
        &[
            ("schema", &schema.render()),
            ("idea", &prompts::render_idea(idea)),
            ("short_memory", short_memory),
            ("long_memory", long_memory),
            ("grammar", dsl::GRAMMAR_REFERENCE),
            ("feedback", feedback_text(feedback)),
        ],
    )?;
    let (_, out) = parse::parse_agent_output(&text, OutputKind::Feature)?;
    let AgentOutput::Feature(proposal) = out else {
        unreachable!()
    };
    if idea.features.iter().any(|f| f.name == proposal.name) {
        return Err(AgentError::OutputParse(format!(
            "duplicate name: idea {} already has a feature called {:?}",
            idea.id, proposal.name
        )));
    }
    Ok(proposal)
}

/// Synthesizes a new idea out of at least two existing ones. The prompt
/// carries every idea with its score statistics; the reply must cite
/// valid parents.
pub fn synthesize_idea(
    provider: &mut Provider,
    prompts: &PromptSet,
    kb: &KnowledgeBase,
    schema: &DataSchema,
    long_memory: &str,
    feedback: Option<&str>,
) -> Result<IdeaProposal, AgentError> {
    debug_assert!(kb.len() >= 2, "synthesize requires at least two ideas");
    let text = complete_role(
        provider,
        prompts,
        Role::IdeaSynthesizer,
        &[
            ("schema", &schema.render()),
            ("knowledge_base", &prompts::render_knowledge_base(kb)),
            ("long_memory", long_memory),
            ("feedback", feedback_text(feedback)),
        ],
    )?;
    let (_, out) = parse::parse_agent_output(&text, OutputKind::Idea)?;
    let AgentOutput::Idea(proposal) = out else {
        unreachable!()
    };
    if proposal.parent_ids.len() < 2 {
        return Err(AgentError::OutputParse(
            "a synthesized idea must cite at least two parent_ids".into(),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &p in &proposal.parent_ids {
        if kb.idea(p).is_err() {
            return Err(AgentError::OutputParse(format!(
                "parent_ids cites idea {p}, which does not exist"
            )));
        }
        if !seen.insert(p) {
            return Err(AgentError::OutputParse(format!(
                "parent_ids cites idea {p} twice"
            )));
        }
    }
    Ok(proposal)
}

/// Creates an entirely new idea; the reply must not cite parents.
pub fn create_idea(
    provider: &mut Provider,
    prompts: &PromptSet,
    kb: &KnowledgeBase,
    schema: &DataSchema,
    long_memory: &str,
    feedback: Option<&str>,
) -> Result<IdeaProposal, AgentError> {
    let text = complete_role(
        provider,
        prompts,
        Role::IdeaCreator,
        &[
            ("schema", &schema.render()),
            ("knowledge_base", &prompts::render_knowledge_base(kb)),
            ("long_memory", long_memory),
            ("feedback", feedback_text(feedback)),
        ],
    )?;
    let (_, out) = parse::parse_agent_output(&text, OutputKind::Idea)?;
    let AgentOutput::Idea(proposal) = out else {
        unreachable!()
    };
    if !proposal.parent_ids.is_empty() {
        return Err(AgentError::OutputParse(
            "a created idea must not cite parent_ids".into(),
        ));
    }
    Ok(proposal)
}

/// Asks the code agent for the full replacement program implementing the
/// proposal on top of the idea's accepted program.
pub fn generate_code(
    provider: &mut Provider,
    prompts: &PromptSet,
    proposal: &FeatureProposal,
    kb: &KnowledgeBase,
    schema: &DataSchema,
    prior_program: &str,
    feedback: Option<&str>,
) -> Result<CodeProposal, AgentError> {
    let prior = if prior_program.trim().is_empty() {
        "(no accepted definitions yet)"
    } else {
        prior_program
    };
    let text = complete_role(
        provider,
        prompts,
        Role::CodeAgent,
        &[
            ("schema", &schema.render()),
            ("feature", &prompts::render_feature_proposal(proposal)),
            ("prior_program", prior),
            ("exemplars", &prompts::render_exemplars(kb, EXEMPLAR_COUNT)),
            ("grammar", dsl::GRAMMAR_REFERENCE),
            ("feedback", feedback_text(feedback)),
        ],
    )?;
    let (_, out) = parse::parse_agent_output(&text, OutputKind::Code)?;
    let AgentOutput::Code(code) = out else {
        unreachable!()
    };
    Ok(code)
}

/// How many top-scoring accepted implementations the code agent sees as
/// few-shot exemplars.
pub const EXEMPLAR_COUNT: usize = 3;

/// LLM review of an idea-level artifact; the verdict is authoritative.
pub fn critique_idea(
    provider: &mut Provider,
    prompts: &PromptSet,
    kb: &KnowledgeBase,
    schema: &DataSchema,
    artifact: &str,
) -> Result<Critique, AgentError> {
    let text = complete_role(
        provider,
        prompts,
        Role::IdeaCritic,
        &[
            ("schema", &schema.render()),
            ("knowledge_base", &prompts::render_knowledge_base(kb)),
            ("artifact", artifact),
        ],
    )?;
    let (_, critique) = parse::parse_critique(&text)?;
    Ok(critique)
}

/// Mechanical pre-check of a generated program: it must parse, typecheck,
/// keep the prior accepted definitions verbatim and add exactly one new
/// definition named after the proposal. Returns critic-style feedback on
/// the first violation.
pub fn mechanical_code_check(
    program_text: &str,
    expected_name: &str,
    prior_program: &str,
    schema: &DataSchema,
) -> Result<dsl::Program, String> {
    let program = dsl::parse(program_text).map_err(|e| e.to_string())?;
    dsl::typecheck(&program, schema).map_err(|e| e.to_string())?;
    let prior = prior_program.trim();
    let prior_defs = if prior.is_empty() {
        Vec::new()
    } else {
        if !program_text.trim_start().starts_with(prior) {
            return Err(
                "the program must begin with the prior accepted definitions, byte for byte"
                    .to_string(),
            );
        }
        dsl::parse(prior)
            .map_err(|e| format!("prior program no longer parses: {e}"))?
            .defs
    };
    if program.defs.len() != prior_defs.len() + 1 {
        return Err(format!(
            "the program must contain the {} prior definitions plus exactly one new one, found {}",
            prior_defs.len(),
            program.defs.len()
        ));
    }
    for (got, want) in program.defs.iter().zip(&prior_defs) {
        if got != want {
            return Err(format!(
                "prior definition {:?} was altered; repeat it unchanged",
                want.name
            ));
        }
    }
    let new_def = program.defs.last().unwrap();
    if new_def.name != expected_name {
        return Err(format!(
            "the new definition must be named {:?}, found {:?}",
            expected_name, new_def.name
        ));
    }
    Ok(program)
}

/// Code critique: the mechanical pre-check auto-rejects without a provider
/// call; programs that pass go to the LLM critic unless `skip_llm`.
pub fn critique_code(
    provider: &mut Provider,
    prompts: &PromptSet,
    proposal: &FeatureProposal,
    schema: &DataSchema,
    program_text: &str,
    prior_program: &str,
    skip_llm: bool,
) -> Result<Critique, AgentError> {
    if let Err(feedback) =
        mechanical_code_check(program_text, &proposal.name, prior_program, schema)
    {
        return Ok(Critique::reject(feedback));
    }
    if skip_llm {
        return Ok(Critique::accept());
    }
    let text = complete_role(
        provider,
        prompts,
        Role::CodeCritic,
        &[
            ("schema", &schema.render()),
            ("feature", &prompts::render_feature_proposal(proposal)),
            ("parse_check", "parse/typecheck: ok"),
            ("artifact", program_text),
        ],
    )?;
    let (_, critique) = parse::parse_critique(&text)?;
    Ok(critique)
}

/// Summarizes a finished trial; the reply becomes the new long-term
/// memory document.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_summarize(
    provider: &mut Provider,
    prompts: &PromptSet,
    idea: &Idea,
    feature_name: &str,
    feature_summary: &str,
    metrics: &MetricsReport,
    score: f64,
    long_memory: &str,
) -> Result<MemorySummary, AgentError> {
    let text = complete_role(
        provider,
        prompts,
        Role::EvaluateAgent,
        &[
            ("idea", &prompts::render_idea(idea)),
            ("feature", &format!("{feature_name}: {feature_summary}")),
            ("metrics", &prompts::render_metrics(metrics)),
            ("score", &format!("{score:+.6}")),
            ("long_memory", long_memory),
        ],
    )?;
    let (_, out) = parse::parse_agent_output(&text, OutputKind::Memory)?;
    let AgentOutput::Memory(summary) = out else {
        unreachable!()
    };
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Refine loop
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum RefineOutcome<T> {
    Accepted {
        artifact: T,
        critiques: Vec<Critique>,
    },
    /// All `max_z` rounds were rejected; carries the full critique history.
    Forfeited(Vec<Critique>),
}

/// Alternates generate and critique, feeding rejection feedback back into
/// the generator, for at most `max_z` rounds. A generator returning
/// `Ok(Err(reason))` signals an output-parse failure, which consumes a
/// round with the reason as feedback. `ctx` (typically the provider) is
/// threaded mutably through both closures.
pub fn refine_loop<C, T>(
    max_z: u32,
    ctx: &mut C,
    mut generate: impl FnMut(&mut C, Option<&str>) -> Result<Result<T, String>, AgentError>,
    mut critic: impl FnMut(&mut C, &T) -> Result<Critique, AgentError>,
) -> Result<RefineOutcome<T>, AgentError> {
    assert!(max_z >= 1, "refine loop needs at least one round");
    let mut critiques: Vec<Critique> = Vec::new();
    for _ in 0..max_z {
        let feedback = critiques.last().map(|c| c.feedback.as_str());
        match generate(ctx, feedback)? {
            Err(parse_reason) => critiques.push(Critique::reject(parse_reason)),
            Ok(artifact) => {
                let critique = critic(ctx, &artifact)?;
                if critique.is_accept() {
                    return Ok(RefineOutcome::Accepted {
                        artifact,
                        critiques,
                    });
                }
                critiques.push(critique);
            }
        }
    }
    Ok(RefineOutcome::Forfeited(critiques))
}
