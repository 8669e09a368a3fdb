//! featforge: an autonomous feature-engineering engine for event-log data.
//!
//! The engine evolves a two-layer knowledge base of natural-language ideas
//! and concrete feature implementations. LLM-backed agents (proposer,
//! synthesizer, creator, coder, critics, evaluator) generate candidates, a
//! UCB bandit decides which idea to grow next, and a deterministic feature
//! DSL executes candidate features over the event log so that a built-in
//! learner can turn metric deltas into rewards.
//!
//! Module map:
//!
//! - [`dataset`]: schema-validated event logs, labels and splits
//! - [`kb`]: the idea/feature knowledge base with scores and provenance
//! - [`bandit`]: relative scores, UCB selection, action sampling
//! - [`dsl`]: the feature definition language (parse, typecheck, execute)
//! - [`eval`]: preprocessing, logistic regression, ranking metrics
//! - [`memory`]: dual long/short-term memory with embedding retrieval
//! - [`agents`]: provider plumbing, structured output parsing, critic loops
//! - [`orchestrator`]: the outer evolution loop, persistence and the CLI

pub mod agents;
pub mod bandit;
pub mod dataset;
pub mod dsl;
pub mod eval;
pub mod kb;
pub mod memory;
pub mod orchestrator;
pub mod table;
pub mod timeutil;

/// Scalar type used by the engine at its external boundaries (state files,
/// CSV tables, JSON reports). The numeric kernels in [`bandit`], [`eval`]
/// and [`memory`] are generic over `num_traits::Float` and are instantiated
/// with this alias everywhere the orchestrator calls them.
pub type Scalar = f64;

/// Entity identifiers are opaque strings taken from the event log.
pub type EntityId = String;

pub use table::FeatureTable;
