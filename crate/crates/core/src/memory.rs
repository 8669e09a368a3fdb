//! Dual memory: a progressively rewritten long-term document and a
//! retrieval-augmented short-term context built from embedding-similar
//! ideas.
//!
//! The default embedder is a hashed bag-of-words with fixed seeds so runs
//! are deterministic and test suites need no network: lowercase, split on
//! non-alphanumeric runs, signed-hash each token into `dim` buckets, then
//! L2-normalize.

use std::collections::BTreeMap;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::agents::{self, AgentError, PromptSet, Provider, Role};
use crate::kb::{Idea, IdeaId};
use crate::Scalar;

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_MAX_CHARS: usize = 4000;

/// Fixed text used when an idea has no retrievable neighbors; no provider
/// call is made in that case.
pub const NO_NEIGHBOR_TEXT: &str = "no related prior experience";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
    /// Optional external embedding endpoint; the built-in hashed
    /// bag-of-words embedder is used when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_endpoint: Option<String>,
}

fn default_k() -> usize {
    DEFAULT_TOP_K
}
fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_max_chars() -> usize {
    DEFAULT_MAX_CHARS
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            k: default_k(),
            dim: default_dim(),
            max_chars: default_max_chars(),
            embedding_endpoint: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("embedding transport error: {0}")]
    Transport(String),
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// FNV-1a, 64-bit, with a seed folded into the offset basis. Stable across
/// platforms and releases, unlike the std hasher.
fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const INDEX_SEED: u64 = 0x5eed_0001;
const SIGN_SEED: u64 = 0x5eed_0002;

/// Deterministic hashed bag-of-words embedding, L2-normalized. The empty
/// token stream embeds to the zero vector, which stays zero.
pub fn embed<F: Float>(text: &str, dim: usize) -> Vec<F> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut acc = vec![0.0f64; dim];
    let lowered = text.to_lowercase();
    for token in lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h1 = fnv1a64(token.as_bytes(), INDEX_SEED);
        let h2 = fnv1a64(token.as_bytes(), SIGN_SEED);
        let sign = if h2 % 2 == 1 { 1.0 } else { -1.0 };
        acc[(h1 % dim as u64) as usize] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    acc.into_iter().map(|v| F::from(v).unwrap()).collect()
}

/// Fetches an embedding from an external endpoint. The wire shape is
/// `POST {"input": text, "dim": dim}` returning `{"embedding": [floats]}`;
/// the result is L2-normalized to keep the unit-norm postcondition (an
/// all-zero reply stays zero).
pub fn embed_external(
    endpoint_url: &str,
    text: &str,
    dim: usize,
) -> Result<Vec<Scalar>, MemoryError> {
    let body = serde_json::json!({"input": text, "dim": dim}).to_string();
    let reply = ureq::post(endpoint_url)
        .timeout(std::time::Duration::from_secs(60))
        .set("Content-Type", "application/json")
        .send_string(&body)
        .map_err(|e| MemoryError::Transport(e.to_string()))?
        .into_string()
        .map_err(|e| MemoryError::Transport(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&reply)
        .map_err(|e| MemoryError::Transport(format!("malformed embedding response: {e}")))?;
    let raw: Vec<Scalar> = value["embedding"]
        .as_array()
        .ok_or_else(|| MemoryError::Transport("embedding response lacks \"embedding\"".into()))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| MemoryError::Transport("non-numeric embedding".into()))
        })
        .collect::<Result<_, _>>()?;
    if raw.len() != dim {
        return Err(MemoryError::Transport(format!(
            "embedding has {} dimensions, expected {dim}",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(MemoryError::Transport("non-finite embedding".into()));
    }
    let norm = raw.iter().map(|v| v * v).sum::<Scalar>().sqrt();
    Ok(if norm > 0.0 {
        raw.iter().map(|v| v / norm).collect()
    } else {
        raw
    })
}

pub fn cosine<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == F::zero() || nb == F::zero() {
        F::zero()
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Embedding input for an idea: the insight plus every feature summary,
/// newline-separated.
pub fn idea_embedding_text(idea: &Idea) -> String {
    let mut parts = vec![idea.insight.clone()];
    parts.extend(idea.features.iter().map(|f| f.summary.clone()));
    parts.join("\n")
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

/// Unit vectors per idea; zero vectors are stored but never retrieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub dim: usize,
    pub entries: BTreeMap<IdeaId, Vec<Scalar>>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        EmbeddingIndex {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn upsert_idea(&mut self, idea: &Idea) {
        self.entries
            .insert(idea.id, embed(&idea_embedding_text(idea), self.dim));
    }

    /// Upsert through an external embedding endpoint when configured,
    /// falling back to the deterministic built-in embedder otherwise.
    pub fn upsert_idea_with(
        &mut self,
        idea: &Idea,
        endpoint: Option<&str>,
    ) -> Result<(), MemoryError> {
        match endpoint {
            Some(url) => {
                let vec = embed_external(url, &idea_embedding_text(idea), self.dim)?;
                self.entries.insert(idea.id, vec);
                Ok(())
            }
            None => {
                self.upsert_idea(idea);
                Ok(())
            }
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("index serializes"),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::other(e.to_string()))
    }
}

/// The `k` stored ideas most cosine-similar to the query idea, excluding
/// the query itself and zero vectors. Ties break toward the smaller id;
/// when fewer than `k` candidates exist they all return, ordered.
pub fn retrieve_related(index: &EmbeddingIndex, query_id: IdeaId, k: usize) -> Vec<IdeaId> {
    let Some(query) = index.entries.get(&query_id) else {
        return Vec::new();
    };
    let mut scored: Vec<(IdeaId, Scalar)> = index
        .entries
        .iter()
        .filter(|(id, vec)| **id != query_id && vec.iter().any(|v| *v != 0.0))
        .map(|(id, vec)| {
            // Stored vectors are unit (or zero, excluded), so the dot
            // product is the cosine.
            let dot: Scalar = query.iter().zip(vec).map(|(a, b)| a * b).sum();
            (*id, dot)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(id, _)| id).collect()
}

// ---------------------------------------------------------------------------
// Long-term memory
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermMemory {
    pub text: String,
    pub max_chars: usize,
    pub updated_at_iteration: u32,
}

impl LongTermMemory {
    pub fn new(max_chars: usize) -> Self {
        LongTermMemory {
            text: String::new(),
            max_chars,
            updated_at_iteration: 0,
        }
    }

    /// Replaces the document with the evaluate agent's summary (the agent
    /// saw the previous document in its prompt and performed the merge).
    /// Overlong text truncates at the last paragraph boundary that fits;
    /// if not even the first paragraph fits, hard-truncate.
    pub fn update(&mut self, summary_text: &str, iteration: u32) {
        self.text = truncate_at_paragraph(summary_text, self.max_chars);
        self.updated_at_iteration = iteration;
    }
}

fn truncate_at_paragraph(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let paragraphs: Vec<&str> = text.split("\n\n").collect();
    let mut kept = String::new();
    for p in paragraphs {
        let candidate = if kept.is_empty() {
            p.to_string()
        } else {
            format!("{kept}\n\n{p}")
        };
        if candidate.chars().count() > max_chars {
            break;
        }
        kept = candidate;
    }
    if kept.is_empty() {
        // No paragraph boundary fits: cut mid-paragraph.
        text.chars().take(max_chars).collect()
    } else {
        kept
    }
}

// ---------------------------------------------------------------------------
// Short-term memory
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermMemory {
    pub text: String,
    pub source_idea_ids: Vec<IdeaId>,
}

/// Summarizes the neighbors' positive and negative experience for the
/// current idea. With no neighbors this returns a fixed text and performs
/// no provider call.
pub fn build_short_term(
    provider: &mut Provider,
    prompts: &PromptSet,
    current: &Idea,
    neighbors: &[&Idea],
) -> Result<ShortTermMemory, AgentError> {
    if neighbors.is_empty() {
        return Ok(ShortTermMemory {
            text: NO_NEIGHBOR_TEXT.to_string(),
            source_idea_ids: Vec::new(),
        });
    }
    let prompt = prompts.render(
        Role::ShortTermMemory,
        &[
            ("idea", &agents::prompts::render_idea(current)),
            ("neighbors", &agents::prompts::render_neighbors(neighbors)),
        ],
    );
    let reply = provider.complete(
        &[agents::ChatMessage::user(prompt)],
        Role::ShortTermMemory.tag(),
    )?;
    let (_, out) = agents::parse::parse_agent_output(&reply, agents::OutputKind::Memory)?;
    let agents::AgentOutput::Memory(summary) = out else {
        unreachable!()
    };
    Ok(ShortTermMemory {
        text: summary.text,
        source_idea_ids: neighbors.iter().map(|n| n.id).collect(),
    })
}
