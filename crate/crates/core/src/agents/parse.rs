//! Structured-output parsing: every agent reply must end with a fenced
//! ```json block carrying the think trace and a role-specific payload.
//! The last fenced json block wins; prose outside it is ignored.

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::kb::IdeaId;

/// The analyze / self-reflect / reconstruct reasoning trace every agent
/// reply carries alongside its payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinkTrace {
    pub analyze: String,
    pub self_reflect: String,
    pub reconstruct: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeaProposal {
    pub insight: String,
    /// Synthesizer replies cite at least two; creator replies cite none.
    pub parent_ids: Vec<IdeaId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProposal {
    pub name: String,
    pub reason: String,
    pub summary: String,
    pub pseudocode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeProposal {
    pub program_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySummary {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub verdict: Verdict,
    pub feedback: String,
}

impl Critique {
    pub fn accept() -> Self {
        Critique {
            verdict: Verdict::Accept,
            feedback: String::new(),
        }
    }

    pub fn reject(feedback: impl Into<String>) -> Self {
        Critique {
            verdict: Verdict::Reject,
            feedback: feedback.into(),
        }
    }

    pub fn is_accept(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentOutput {
    Idea(IdeaProposal),
    Feature(FeatureProposal),
    Code(CodeProposal),
    Memory(MemorySummary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Idea,
    Feature,
    Code,
    Memory,
}

/// Returns the body of the last fenced block opened by a ```json line.
fn last_json_block(text: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    let mut current_is_json = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match current.take() {
                Some(body) => {
                    if current_is_json {
                        blocks.push(body.join("\n"));
                    }
                }
                None => {
                    current = Some(Vec::new());
                    current_is_json = rest.trim().eq_ignore_ascii_case("json");
                }
            }
        } else if let Some(body) = current.as_mut() {
            body.push(line);
        }
    }
    blocks.pop()
}

fn parse_err(reason: impl Into<String>) -> AgentError {
    AgentError::OutputParse(reason.into())
}

fn get_str(obj: &serde_json::Value, field: &str) -> Result<String, AgentError> {
    obj.get(field)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| parse_err(format!("output is missing string field {field:?}")))
}

fn parse_envelope(
    text: &str,
    allow_empty_trace: bool,
) -> Result<(ThinkTrace, serde_json::Value), AgentError> {
    let block =
        last_json_block(text).ok_or_else(|| parse_err("reply contains no fenced json block"))?;
    let doc: serde_json::Value = serde_json::from_str(&block)
        .map_err(|e| parse_err(format!("fenced json block is malformed: {e}")))?;
    let mut fields = Vec::new();
    for name in ["analyze", "self_reflect", "reconstruct"] {
        let v = doc
            .get(name)
            .and_then(|v| v.as_str())
            .ok_or_else(|| parse_err(format!("reply is missing the {name:?} field")))?;
        if v.trim().is_empty() && !allow_empty_trace {
            return Err(parse_err(format!("the {name:?} field must be nonempty")));
        }
        fields.push(v.to_string());
    }
    let output = doc
        .get("output")
        .cloned()
        .ok_or_else(|| parse_err("reply is missing the \"output\" object"))?;
    if !output.is_object() {
        return Err(parse_err("\"output\" must be a json object"));
    }
    let trace = ThinkTrace {
        analyze: fields[0].clone(),
        self_reflect: fields[1].clone(),
        reconstruct: fields[2].clone(),
    };
    Ok((trace, output))
}

/// Parses an agent reply and validates the payload against the expected
/// kind. The error text doubles as critic-style feedback on retry.
pub fn parse_agent_output(
    text: &str,
    expected: OutputKind,
) -> Result<(ThinkTrace, AgentOutput), AgentError> {
    let (trace, output) = parse_envelope(text, false)?;
    let payload = match expected {
        OutputKind::Idea => {
            let insight = get_str(&output, "insight")?;
            if insight.trim().is_empty() {
                return Err(parse_err("insight must be nonempty"));
            }
            let parent_ids = match output.get("parent_ids") {
                None | Some(serde_json::Value::Null) => Vec::new(),
                Some(v) => serde_json::from_value::<Vec<IdeaId>>(v.clone())
                    .map_err(|_| parse_err("parent_ids must be an array of idea ids"))?,
            };
            AgentOutput::Idea(IdeaProposal {
                insight,
                parent_ids,
            })
        }
        OutputKind::Feature => {
            let name = get_str(&output, "name")?;
            if !crate::dsl::is_valid_identifier(&name) {
                return Err(parse_err(format!(
                    "feature name {name:?} is not a valid identifier ([a-z_][a-z0-9_]*, \
                     keywords reserved)"
                )));
            }
            AgentOutput::Feature(FeatureProposal {
                name,
                reason: get_str(&output, "reason")?,
                summary: get_str(&output, "summary")?,
                pseudocode: get_str(&output, "pseudocode")?,
            })
        }
        OutputKind::Code => {
            let program_text = get_str(&output, "program_text")?;
            if program_text.trim().is_empty() {
                return Err(parse_err("program_text must be nonempty"));
            }
            AgentOutput::Code(CodeProposal { program_text })
        }
        OutputKind::Memory => AgentOutput::Memory(MemorySummary {
            text: get_str(&output, "text")?,
        }),
    };
    Ok((trace, payload))
}

/// Parses a critic reply; reasoning fields may be empty for verdicts, but
/// a rejection must carry nonempty feedback.
pub fn parse_critique(text: &str) -> Result<(ThinkTrace, Critique), AgentError> {
    let (trace, output) = parse_envelope(text, true)?;
    let verdict = match get_str(&output, "verdict")?.as_str() {
        "accept" => Verdict::Accept,
        "reject" => Verdict::Reject,
        other => {
            return Err(parse_err(format!(
                "verdict must be accept or reject, got {other:?}"
            )))
        }
    };
    let feedback = output
        .get("feedback")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    if verdict == Verdict::Reject && feedback.trim().is_empty() {
        return Err(parse_err("a rejection must carry nonempty feedback"));
    }
    Ok((trace, Critique { verdict, feedback }))
}
