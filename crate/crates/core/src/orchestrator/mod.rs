//! The outer evolution loop: owns all mutable state, persists every stage
//! for deterministic resume, and backs the CLI.

mod config;
pub mod report;
mod state;

pub use config::{DatasetConfig, DslBackend, DslConfig, RunConfig, RunError};
pub use report::{render_report, report_table, write_report};
pub use state::{BestSoFar, IterationRecord, Outcome, PersistedState};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{self, AgentError, Critique, PromptSet, Provider, RefineOutcome};
use crate::bandit::{self, IdeaAction};
use crate::dataset::{self, Dataset};
use crate::dsl;
use crate::eval::{self, MetricsReport, Split};
use crate::kb::{FeatureId, IdeaId, IdeaOrigin, KnowledgeBase};
use crate::memory::{self, EmbeddingIndex, LongTermMemory};
use crate::table::FeatureTable;
use crate::{EntityId, Scalar};

const LOCK_FILE: &str = ".lock";
const STATE_FILE: &str = "state.json";
const CONFIG_FILE: &str = "config.json";
const KB_FILE: &str = "knowledge_base.json";
const MEMORY_DIR: &str = "memory";
const LONG_TERM_FILE: &str = "long_term.txt";
const INDEX_FILE: &str = "index.json";
const ITERATIONS_DIR: &str = "iterations";
const BEST_DIR: &str = "best";

/// Placeholder memory text used when `disable_memory` is set.
const MEMORY_DISABLED_TEXT: &str = "(memory disabled)";

struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(run_dir: &Path) -> Result<LockGuard, RunError> {
        let path = run_dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RunError::Lock(format!(
                    "run directory is locked ({}); remove the file if stale",
                    path.display()
                )))
            }
            Err(e) => Err(RunError::Io(e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// In-memory run state. Everything here is reconstructible from the run
/// directory alone.
pub struct RunState {
    pub kb: KnowledgeBase,
    pub long_term: LongTermMemory,
    pub index: EmbeddingIndex,
    pub rng: ChaCha8Rng,
    pub completed_iterations: u32,
    pub baseline_metric: Scalar,
    pub baseline_report: MetricsReport,
    pub idea_metrics: BTreeMap<IdeaId, Scalar>,
    pub best: BestSoFar,
}

pub struct RunResult {
    pub run_dir: PathBuf,
    pub iterations: u32,
    pub best_metric: Scalar,
    pub best_program: String,
    pub best_metrics: MetricsReport,
}

pub struct Orchestrator {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub split: Split,
    pub prompts: PromptSet,
    pub provider: Provider,
    pub state: RunState,
    run_dir: PathBuf,
    labeled_ids: Vec<EntityId>,
    /// Feature table produced by the current iteration, waiting for its
    /// artifact write.
    pending_table: Option<FeatureTable>,
    _lock: LockGuard,
}

fn map_parse<T>(r: Result<T, AgentError>) -> Result<Result<T, String>, AgentError> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(AgentError::OutputParse(reason)) => Ok(Err(reason)),
        Err(other) => Err(other),
    }
}

fn provider_err(e: AgentError) -> RunError {
    RunError::Provider(e)
}

impl Orchestrator {
    /// Initializes a fresh run directory and computes the baseline metric.
    pub fn init(config: RunConfig) -> Result<Orchestrator, RunError> {
        config.validate()?;
        let prompts = config.load_prompts()?;
        let run_dir = config.out_dir.clone();
        std::fs::create_dir_all(&run_dir)?;
        if run_dir.join(STATE_FILE).exists() {
            return Err(RunError::Config(format!(
                "{} already contains a run; use resume",
                run_dir.display()
            )));
        }
        let lock = LockGuard::acquire(&run_dir)?;
        std::fs::create_dir_all(run_dir.join(ITERATIONS_DIR))?;
        std::fs::create_dir_all(run_dir.join(MEMORY_DIR))?;

        let dataset = dataset::load_dataset(
            &config.dataset.events_path,
            &config.dataset.labels_path,
            &config.dataset.schema_path,
        )?;
        let (train_ids, test_ids) = dataset::split_entities(&dataset, &config.dataset.split)?;
        let split = Split {
            train_ids,
            test_ids,
        };
        let labeled_ids = dataset.labeled_ids();

        // Baseline: the learner on the baseline matrix alone.
        let zero = FeatureTable::zero_width(labeled_ids.clone());
        let baseline_report = eval::evaluate_feature_set(&zero, &dataset, &split, &config.learner)
            .map_err(|e| RunError::State(format!("baseline evaluation failed: {e}")))?;
        let baseline_metric = baseline_report.auc;

        let mut kb = KnowledgeBase::new();
        let mut index = EmbeddingIndex::new(config.memory.dim);
        let mut idea_metrics = BTreeMap::new();
        for insight in &config.prior_ideas {
            let id = kb
                .add_idea(insight, IdeaOrigin::Prior, &[], 0)
                .map_err(|e| RunError::Config(format!("prior idea rejected: {e}")))?;
            idea_metrics.insert(id, baseline_metric);
            index
                .upsert_idea_with(
                    kb.idea(id).unwrap(),
                    config.memory.embedding_endpoint.as_deref(),
                )
                .map_err(|e| RunError::Provider(AgentError::Transport(e.to_string())))?;
        }

        let state = RunState {
            kb,
            long_term: LongTermMemory::new(config.memory.max_chars),
            index,
            rng: ChaCha8Rng::seed_from_u64(config.bandit.rng_seed),
            completed_iterations: 0,
            baseline_metric,
            baseline_report,
            idea_metrics,
            best: BestSoFar {
                metric: baseline_metric,
                idea_id: None,
                program: String::new(),
                features_ref: None,
            },
        };

        config.save(&run_dir.join(CONFIG_FILE))?;
        let provider = Provider::new(config.provider.clone());
        let mut orch = Orchestrator {
            config,
            dataset,
            split,
            prompts,
            provider,
            state,
            run_dir,
            labeled_ids,
            pending_table: None,
            _lock: lock,
        };
        orch.persist_state()?;
        Ok(orch)
    }

    /// Reopens a run directory and restores the exact pre-crash state.
    pub fn resume(run_dir: &Path) -> Result<Orchestrator, RunError> {
        let mut config = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
        config.out_dir = run_dir.to_path_buf();
        let prompts = config.load_prompts()?;
        let lock = LockGuard::acquire(run_dir)?;

        let dataset = dataset::load_dataset(
            &config.dataset.events_path,
            &config.dataset.labels_path,
            &config.dataset.schema_path,
        )?;
        let (train_ids, test_ids) = dataset::split_entities(&dataset, &config.dataset.split)?;
        let split = Split {
            train_ids,
            test_ids,
        };
        let labeled_ids = dataset.labeled_ids();

        let persisted = PersistedState::load(&run_dir.join(STATE_FILE))?;
        let kb = KnowledgeBase::load(&run_dir.join(KB_FILE))
            .map_err(|e| RunError::State(e.to_string()))?;
        let index = EmbeddingIndex::load(&run_dir.join(MEMORY_DIR).join(INDEX_FILE))?;
        let long_text = std::fs::read_to_string(run_dir.join(MEMORY_DIR).join(LONG_TERM_FILE))
            .unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.bandit.rng_seed);
        rng.set_word_pos(persisted.rng_word_pos);
        let mut provider = Provider::new(config.provider.clone());
        provider.restore_ordinals(persisted.role_ordinals.clone());

        let state = RunState {
            kb,
            long_term: LongTermMemory {
                text: long_text,
                max_chars: config.memory.max_chars,
                updated_at_iteration: persisted.long_term_updated_at,
            },
            index,
            rng,
            completed_iterations: persisted.completed_iterations,
            baseline_metric: persisted.baseline_metric,
            baseline_report: persisted.baseline_report,
            idea_metrics: persisted.idea_metrics,
            best: persisted.best,
        };
        Ok(Orchestrator {
            config,
            dataset,
            split,
            prompts,
            provider,
            state,
            run_dir: run_dir.to_path_buf(),
            labeled_ids,
            pending_table: None,
            _lock: lock,
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn remaining_iterations(&self) -> u32 {
        self.config
            .max_iterations
            .saturating_sub(self.state.completed_iterations)
    }

    // -----------------------------------------------------------------
    // One iteration of the outer loop
    // -----------------------------------------------------------------

    /// Runs one iteration: choose an action, drive the (idea, code)
    /// refine loops, execute and evaluate, update the knowledge base and
    /// memories, and persist everything before returning.
    pub fn step(&mut self) -> Result<IterationRecord, RunError> {
        let t = self.state.completed_iterations + 1;
        let action =
            bandit::choose_action(&self.state.kb, &self.config.bandit, &mut self.state.rng);
        let record = match action {
            IdeaAction::Synthesize | IdeaAction::Create => self.step_idea_generation(t, action)?,
            IdeaAction::ProposeFeature => self.step_propose_feature(t)?,
        };
        self.write_iteration_artifacts(&record)?;
        self.state.completed_iterations = t;
        self.persist_state()?;
        Ok(record)
    }

    /// Synthesize/Create: run the idea refine loop; on accept, add the
    /// idea. No reward event happens in these iterations.
    fn step_idea_generation(
        &mut self,
        t: u32,
        action: IdeaAction,
    ) -> Result<IterationRecord, RunError> {
        let z = self.config.max_critic_iters;
        let kb = &self.state.kb;
        let schema = &self.dataset.schema;
        let long_mem = if self.config.disable_memory {
            MEMORY_DISABLED_TEXT.to_string()
        } else {
            self.state.long_term.text.clone()
        };
        let prompts = &self.prompts;
        let disable_critics = self.config.disable_critics;

        let outcome = agents::refine_loop(
            z,
            &mut self.provider,
            |provider, feedback| {
                map_parse(match action {
                    IdeaAction::Synthesize => {
                        agents::synthesize_idea(provider, prompts, kb, schema, &long_mem, feedback)
                    }
                    _ => agents::create_idea(provider, prompts, kb, schema, &long_mem, feedback),
                })
            },
            |provider, proposal| {
                if disable_critics {
                    return Ok(Critique::accept());
                }
                let artifact = format!(
                    "proposed {} idea: {}\nparents: {:?}",
                    if action == IdeaAction::Synthesize {
                        "synthesized"
                    } else {
                        "new"
                    },
                    proposal.insight,
                    proposal.parent_ids
                );
                agents::critique_idea(provider, prompts, kb, schema, &artifact)
            },
        )
        .map_err(provider_err)?;

        let record = match outcome {
            RefineOutcome::Accepted {
                artifact,
                critiques,
            } => {
                let origin = if action == IdeaAction::Synthesize {
                    IdeaOrigin::Synthesized
                } else {
                    IdeaOrigin::Created
                };
                let id = self
                    .state
                    .kb
                    .add_idea(&artifact.insight, origin, &artifact.parent_ids, t)
                    .map_err(|e| RunError::State(e.to_string()))?;
                self.state
                    .idea_metrics
                    .insert(id, self.state.baseline_metric);
                self.upsert_embedding(id)?;
                IterationRecord {
                    iteration: t,
                    action,
                    idea_id: Some(id),
                    feature_id: None,
                    feature_name: None,
                    program: None,
                    critiques,
                    metrics: None,
                    score: None,
                    outcome: Outcome::Accepted,
                    error: None,
                }
            }
            RefineOutcome::Forfeited(critiques) => IterationRecord {
                iteration: t,
                action,
                idea_id: None,
                feature_id: None,
                feature_name: None,
                program: None,
                critiques,
                metrics: None,
                score: None,
                outcome: Outcome::ForfeitedIdea,
                error: None,
            },
        };
        Ok(record)
    }

    /// ProposeFeature: UCB selection, short-term memory, proposal and code
    /// refine loops, execution, evaluation, reward bookkeeping, memory
    /// update, best-so-far tracking.
    fn step_propose_feature(&mut self, t: u32) -> Result<IterationRecord, RunError> {
        let z = self.config.max_critic_iters;
        let idea_id = if self.config.disable_ucb {
            let n = self.state.kb.len();
            if n == 0 {
                return Err(RunError::State("propose without ideas".into()));
            }
            self.state.rng.gen_range(0..n) as IdeaId
        } else {
            bandit::select_idea(&self.state.kb, &self.config.bandit)
                .map_err(|e| RunError::State(e.to_string()))?
        };

        // Short-term memory for the selected idea.
        let short_text = if self.config.disable_memory {
            MEMORY_DISABLED_TEXT.to_string()
        } else {
            let neighbor_ids =
                memory::retrieve_related(&self.state.index, idea_id, self.config.memory.k);
            let neighbors: Vec<&crate::kb::Idea> = neighbor_ids
                .iter()
                .map(|id| self.state.kb.idea(*id).unwrap())
                .collect();
            let current = self.state.kb.idea(idea_id).unwrap();
            memory::build_short_term(&mut self.provider, &self.prompts, current, &neighbors)
                .map_err(provider_err)?
                .text
        };
        let long_mem = if self.config.disable_memory {
            MEMORY_DISABLED_TEXT.to_string()
        } else {
            self.state.long_term.text.clone()
        };

        // Feature proposal under the idea critic.
        let idea_snapshot = self.state.kb.idea(idea_id).unwrap().clone();
        let kb = &self.state.kb;
        let schema = &self.dataset.schema;
        let prompts = &self.prompts;
        let disable_critics = self.config.disable_critics;
        let proposal_outcome = agents::refine_loop(
            z,
            &mut self.provider,
            |provider, feedback| {
                map_parse(agents::propose_feature(
                    provider,
                    prompts,
                    &idea_snapshot,
                    schema,
                    &short_text,
                    &long_mem,
                    feedback,
                ))
            },
            |provider, proposal| {
                if disable_critics {
                    return Ok(Critique::accept());
                }
                agents::critique_idea(
                    provider,
                    prompts,
                    kb,
                    schema,
                    &agents::prompts::render_feature_proposal(proposal),
                )
            },
        )
        .map_err(provider_err)?;

        let (proposal, mut critiques) = match proposal_outcome {
            RefineOutcome::Accepted {
                artifact,
                critiques,
            } => (artifact, critiques),
            RefineOutcome::Forfeited(critiques) => {
                return Ok(IterationRecord {
                    iteration: t,
                    action: IdeaAction::ProposeFeature,
                    idea_id: Some(idea_id),
                    feature_id: None,
                    feature_name: None,
                    program: None,
                    critiques,
                    metrics: None,
                    score: None,
                    outcome: Outcome::ForfeitedIdea,
                    error: None,
                });
            }
        };

        // Code generation under the code critic (mechanical pre-check
        // plus optional LLM verdict).
        let prior_program = self
            .state
            .kb
            .accepted_program_text(idea_id)
            .map_err(|e| RunError::State(e.to_string()))?;
        let code_outcome = agents::refine_loop(
            z,
            &mut self.provider,
            |provider, feedback| {
                map_parse(agents::generate_code(
                    provider,
                    prompts,
                    &proposal,
                    kb,
                    schema,
                    &prior_program,
                    feedback,
                ))
            },
            |provider, code: &agents::CodeProposal| {
                agents::critique_code(
                    provider,
                    prompts,
                    &proposal,
                    schema,
                    &code.program_text,
                    &prior_program,
                    disable_critics,
                )
            },
        )
        .map_err(provider_err)?;

        let code = match code_outcome {
            RefineOutcome::Accepted {
                artifact,
                critiques: code_critiques,
            } => {
                critiques.extend(code_critiques);
                artifact
            }
            RefineOutcome::Forfeited(code_critiques) => {
                critiques.extend(code_critiques);
                let feature_id = self.register_feature(idea_id, &proposal, t)?;
                self.state
                    .kb
                    .mark_failed(idea_id, feature_id)
                    .map_err(|e| RunError::State(e.to_string()))?;
                self.upsert_embedding(idea_id)?;
                return Ok(IterationRecord {
                    iteration: t,
                    action: IdeaAction::ProposeFeature,
                    idea_id: Some(idea_id),
                    feature_id: Some(feature_id),
                    feature_name: Some(proposal.name.clone()),
                    program: None,
                    critiques,
                    metrics: None,
                    score: None,
                    outcome: Outcome::ForfeitedCode,
                    error: None,
                });
            }
        };

        // The program passed the mechanical check inside the critic, so
        // this parse cannot fail.
        let program = dsl::parse(&code.program_text)
            .map_err(|e| RunError::State(format!("accepted program no longer parses: {e}")))?;
        let fragment = dsl::print_def(program.defs.last().expect("non-empty program"));
        let canonical_program = if prior_program.trim().is_empty() {
            fragment.clone()
        } else {
            format!("{}\n{}", prior_program.trim(), fragment)
        };

        let feature_id = self.register_feature(idea_id, &proposal, t)?;

        // Execute over every labeled entity and close the reward loop.
        let executed = self.execute_program(&program, &code.program_text);
        let table = match executed {
            Ok(table) => table,
            Err(e) => {
                self.state
                    .kb
                    .mark_failed(idea_id, feature_id)
                    .map_err(|er| RunError::State(er.to_string()))?;
                self.state
                    .kb
                    .set_program_fragment(idea_id, feature_id, &fragment)
                    .map_err(|er| RunError::State(er.to_string()))?;
                self.upsert_embedding(idea_id)?;
                return Ok(IterationRecord {
                    iteration: t,
                    action: IdeaAction::ProposeFeature,
                    idea_id: Some(idea_id),
                    feature_id: Some(feature_id),
                    feature_name: Some(proposal.name.clone()),
                    program: Some(canonical_program),
                    critiques,
                    metrics: None,
                    score: None,
                    outcome: Outcome::Error,
                    error: Some(e),
                });
            }
        };

        let metrics = match eval::evaluate_feature_set(
            &table,
            &self.dataset,
            &self.split,
            &self.config.learner,
        ) {
            Ok(m) => m,
            Err(e) => {
                self.state
                    .kb
                    .mark_failed(idea_id, feature_id)
                    .map_err(|er| RunError::State(er.to_string()))?;
                self.state
                    .kb
                    .set_program_fragment(idea_id, feature_id, &fragment)
                    .map_err(|er| RunError::State(er.to_string()))?;
                self.upsert_embedding(idea_id)?;
                return Ok(IterationRecord {
                    iteration: t,
                    action: IdeaAction::ProposeFeature,
                    idea_id: Some(idea_id),
                    feature_id: Some(feature_id),
                    feature_name: Some(proposal.name.clone()),
                    program: Some(canonical_program),
                    critiques,
                    metrics: None,
                    score: None,
                    outcome: Outcome::Error,
                    error: Some(e.to_string()),
                });
            }
        };

        let prev_metric = *self
            .state
            .idea_metrics
            .get(&idea_id)
            .unwrap_or(&self.state.baseline_metric);
        let score = bandit::relative_score(metrics.auc, prev_metric);
        self.state
            .kb
            .set_program_fragment(idea_id, feature_id, &fragment)
            .map_err(|e| RunError::State(e.to_string()))?;
        let status = self
            .state
            .kb
            .record_outcome(idea_id, feature_id, score)
            .map_err(|e| RunError::State(e.to_string()))?;
        self.upsert_embedding(idea_id)?;
        let accepted = status == crate::kb::FeatureStatus::Accepted;
        if accepted {
            self.state.idea_metrics.insert(idea_id, metrics.auc);
        }

        // Evaluate agent summarizes the trial into the long-term memory.
        if !self.config.disable_memory {
            let idea_now = self.state.kb.idea(idea_id).unwrap();
            let summary = agents::evaluate_summarize(
                &mut self.provider,
                &self.prompts,
                idea_now,
                &proposal.name,
                &proposal.summary,
                &metrics,
                score,
                &self.state.long_term.text,
            )
            .map_err(provider_err)?;
            self.state.long_term.update(&summary.text, t);
        }

        // Track the best idea metric seen so far.
        if accepted && metrics.auc > self.state.best.metric {
            self.state.best = BestSoFar {
                metric: metrics.auc,
                idea_id: Some(idea_id),
                program: canonical_program.clone(),
                features_ref: Some(format!("{ITERATIONS_DIR}/{t}/features.csv")),
            };
        }

        // Feature table artifact is written with the record below.
        self.pending_table = Some(table);
        Ok(IterationRecord {
            iteration: t,
            action: IdeaAction::ProposeFeature,
            idea_id: Some(idea_id),
            feature_id: Some(feature_id),
            feature_name: Some(proposal.name.clone()),
            program: Some(canonical_program),
            critiques,
            metrics: Some(metrics),
            score: Some(score),
            outcome: if accepted {
                Outcome::Accepted
            } else {
                Outcome::Rejected
            },
            error: None,
        })
    }

    fn upsert_embedding(&mut self, idea_id: IdeaId) -> Result<(), RunError> {
        let idea = self
            .state
            .kb
            .idea(idea_id)
            .map_err(|e| RunError::State(e.to_string()))?;
        let endpoint = self.config.memory.embedding_endpoint.clone();
        self.state
            .index
            .upsert_idea_with(idea, endpoint.as_deref())
            .map_err(|e| RunError::Provider(AgentError::Transport(e.to_string())))
    }

    fn register_feature(
        &mut self,
        idea_id: IdeaId,
        proposal: &agents::FeatureProposal,
        t: u32,
    ) -> Result<FeatureId, RunError> {
        self.state
            .kb
            .add_feature(
                idea_id,
                &proposal.name,
                &proposal.reason,
                &proposal.summary,
                &proposal.pseudocode,
                t,
            )
            .map_err(|e| RunError::State(e.to_string()))
    }

    fn exec_options(&self) -> dsl::ExecOptions {
        dsl::ExecOptions {
            anchor: if self.config.dsl.per_entity_window_anchor {
                dsl::WindowAnchor::PerEntity
            } else {
                dsl::WindowAnchor::Global
            },
            workers: self.config.dsl.workers,
            timeout: self
                .config
                .dsl
                .exec_timeout_seconds
                .map(std::time::Duration::from_secs),
        }
    }

    /// Runs the program through the configured backend; errors come back
    /// as strings because they are absorbed into the iteration outcome.
    fn execute_program(
        &self,
        program: &dsl::Program,
        program_text: &str,
    ) -> Result<FeatureTable, String> {
        match &self.config.dsl.backend {
            DslBackend::Builtin => dsl::execute(
                program,
                &self.dataset,
                &self.labeled_ids,
                &self.exec_options(),
            )
            .map_err(|e| e.to_string()),
            DslBackend::External(runner) => dsl::execute_external(
                runner,
                program_text,
                &self.config.dataset.events_path,
                &self.config.dataset.labels_path,
                &self.config.dataset.schema_path,
                &self.labeled_ids,
            )
            .map_err(|e| e.to_string()),
        }
    }

    // -----------------------------------------------------------------
    // Persistence
    // -----------------------------------------------------------------

    fn write_iteration_artifacts(&mut self, record: &IterationRecord) -> Result<(), RunError> {
        let dir = self
            .run_dir
            .join(ITERATIONS_DIR)
            .join(record.iteration.to_string());
        // A stale directory can exist after a crash; rebuild it.
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        record.save(&dir.join("record.json"))?;
        if let Some(program) = &record.program {
            std::fs::write(dir.join("program.fdl"), program)?;
        }
        if let Some(metrics) = &record.metrics {
            std::fs::write(
                dir.join("metrics.json"),
                serde_json::to_string_pretty(metrics).expect("metrics serialize"),
            )?;
        }
        if let Some(table) = self.pending_table.take() {
            table
                .write_csv(&dir.join("features.csv"))
                .map_err(|e| RunError::State(e.to_string()))?;
        }
        let tdir = dir.join("transcripts");
        std::fs::create_dir_all(&tdir)?;
        for (i, entry) in self.provider.take_log().into_iter().enumerate() {
            let path = tdir.join(format!("{i:03}_{}.txt", entry.role_tag));
            let body = format!(
                "=== role: {} | ordinal: {} ===\n--- prompt ---\n{}\n--- reply ---\n{}\n",
                entry.role_tag, entry.ordinal, entry.prompt, entry.reply
            );
            std::fs::write(path, body)?;
        }
        Ok(())
    }

    fn persist_state(&mut self) -> Result<(), RunError> {
        self.state
            .kb
            .save(&self.run_dir.join(KB_FILE))
            .map_err(|e| RunError::State(e.to_string()))?;
        let mem_dir = self.run_dir.join(MEMORY_DIR);
        std::fs::write(mem_dir.join(LONG_TERM_FILE), &self.state.long_term.text)?;
        self.state.index.save(&mem_dir.join(INDEX_FILE))?;
        let persisted = PersistedState {
            completed_iterations: self.state.completed_iterations,
            rng_word_pos: self.state.rng.get_word_pos(),
            role_ordinals: self.provider.ordinals().clone(),
            baseline_metric: self.state.baseline_metric,
            baseline_report: self.state.baseline_report,
            idea_metrics: self.state.idea_metrics.clone(),
            best: self.state.best.clone(),
            long_term_updated_at: self.state.long_term.updated_at_iteration,
        };
        persisted.save(&self.run_dir.join(STATE_FILE))
    }

    // -----------------------------------------------------------------
    // Final selection
    // -----------------------------------------------------------------

    /// Evaluates every idea's accepted program plus the cross-idea union
    /// program and returns the argmax by the target metric; ties resolve
    /// to the earliest candidate. With no accepted features anywhere the
    /// baseline wins.
    pub fn select_best(&self) -> Result<(Scalar, String, MetricsReport, FeatureTable), RunError> {
        let mut candidates: Vec<String> = Vec::new();
        for idea in self.state.kb.ideas() {
            let text = self
                .state
                .kb
                .accepted_program_text(idea.id)
                .map_err(|e| RunError::State(e.to_string()))?;
            if !text.trim().is_empty() {
                candidates.push(text);
            }
        }
        if let Some(union) = self.union_program()? {
            candidates.push(union);
        }
        if candidates.is_empty() {
            let table = FeatureTable::zero_width(self.labeled_ids.clone());
            return Ok((
                self.state.baseline_metric,
                String::new(),
                self.state.baseline_report,
                table,
            ));
        }

        let mut best: Option<(Scalar, String, MetricsReport, FeatureTable)> = None;
        for text in candidates {
            let program = dsl::parse(&text)
                .map_err(|e| RunError::State(format!("candidate program invalid: {e}")))?;
            dsl::typecheck(&program, &self.dataset.schema)
                .map_err(|e| RunError::State(format!("candidate program invalid: {e}")))?;
            let table = self
                .execute_program(&program, &text)
                .map_err(|e| RunError::State(format!("candidate execution failed: {e}")))?;
            let metrics = eval::evaluate_feature_set(
                &table,
                &self.dataset,
                &self.split,
                &self.config.learner,
            )
            .map_err(|e| RunError::State(e.to_string()))?;
            match &best {
                Some((m, _, _, _)) if metrics.auc <= *m => {}
                _ => best = Some((metrics.auc, text, metrics, table)),
            }
        }
        Ok(best.expect("candidates were non-empty"))
    }

    /// Concatenates all accepted definitions across ideas. Names that
    /// collide between ideas are prefixed with their idea id, and derived
    /// references inside the same idea follow the rename.
    fn union_program(&self) -> Result<Option<String>, RunError> {
        let mut idea_programs: Vec<(IdeaId, dsl::Program)> = Vec::new();
        let mut name_counts: BTreeMap<String, usize> = BTreeMap::new();
        for idea in self.state.kb.ideas() {
            let text = self
                .state
                .kb
                .accepted_program_text(idea.id)
                .map_err(|e| RunError::State(e.to_string()))?;
            if text.trim().is_empty() {
                continue;
            }
            let program = dsl::parse(&text)
                .map_err(|e| RunError::State(format!("accepted program invalid: {e}")))?;
            for def in &program.defs {
                *name_counts.entry(def.name.clone()).or_default() += 1;
            }
            idea_programs.push((idea.id, program));
        }
        if idea_programs.len() < 2 {
            return Ok(None);
        }
        let mut defs: Vec<dsl::FeatureDef> = Vec::new();
        for (idea_id, program) in idea_programs {
            let mut rename: BTreeMap<String, String> = BTreeMap::new();
            for def in &program.defs {
                if name_counts[&def.name] > 1 {
                    rename.insert(def.name.clone(), format!("i{}_{}", idea_id, def.name));
                }
            }
            for mut def in program.defs {
                if let Some(new_name) = rename.get(&def.name) {
                    def.name = new_name.clone();
                }
                if let dsl::FeatureBody::Derived(expr) = &mut def.body {
                    rename_idents(expr, &rename);
                }
                defs.push(def);
            }
        }
        Ok(Some(dsl::pretty_print(&dsl::Program { defs })))
    }

    /// Finishes the run: selects the best candidate and writes `best/`.
    pub fn finalize(&mut self) -> Result<RunResult, RunError> {
        let (metric, program, metrics, table) = self.select_best()?;
        let best_dir = self.run_dir.join(BEST_DIR);
        std::fs::create_dir_all(&best_dir)?;
        std::fs::write(best_dir.join("program.fdl"), &program)?;
        std::fs::write(
            best_dir.join("metrics.json"),
            serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
        )?;
        table
            .write_csv(&best_dir.join("features.csv"))
            .map_err(|e| RunError::State(e.to_string()))?;
        Ok(RunResult {
            run_dir: self.run_dir.clone(),
            iterations: self.state.completed_iterations,
            best_metric: metric,
            best_program: program,
            best_metrics: metrics,
        })
    }
}

fn rename_idents(expr: &mut dsl::Expr, rename: &BTreeMap<String, String>) {
    match expr {
        dsl::Expr::Ident(name) => {
            if let Some(new_name) = rename.get(name) {
                *name = new_name.clone();
            }
        }
        dsl::Expr::Binary { lhs, rhs, .. } => {
            rename_idents(lhs, rename);
            rename_idents(rhs, rename);
        }
        dsl::Expr::Unary { expr, .. } => rename_idents(expr, rename),
        dsl::Expr::In { expr, .. } | dsl::Expr::IsNull { expr, .. } => rename_idents(expr, rename),
        _ => {}
    }
}

fn drive(mut orch: Orchestrator) -> Result<RunResult, RunError> {
    let started = std::time::Instant::now();
    let budget = orch
        .config
        .max_wall_clock_seconds
        .map(std::time::Duration::from_secs);
    while orch.remaining_iterations() > 0 {
        if let Some(b) = budget {
            if started.elapsed() >= b {
                break;
            }
        }
        orch.step()?;
    }
    orch.finalize()
}

/// Runs a fresh configuration to its iteration (or wall-clock) budget.
pub fn run(config: RunConfig) -> Result<RunResult, RunError> {
    drive(Orchestrator::init(config)?)
}

/// Resumes a run directory and completes the remaining iterations.
pub fn resume_run(run_dir: &Path) -> Result<RunResult, RunError> {
    drive(Orchestrator::resume(run_dir)?)
}

/// Adds a prior-origin idea to a persisted (not currently running) run.
pub fn inject_idea(run_dir: &Path, insight: &str) -> Result<IdeaId, RunError> {
    let lock_path = run_dir.join(LOCK_FILE);
    if lock_path.exists() {
        return Err(RunError::Lock(format!(
            "a step is in progress ({} exists)",
            lock_path.display()
        )));
    }
    let config = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let mut state = PersistedState::load(&run_dir.join(STATE_FILE))?;
    let mut kb =
        KnowledgeBase::load(&run_dir.join(KB_FILE)).map_err(|e| RunError::State(e.to_string()))?;
    let id = kb
        .add_idea(insight, IdeaOrigin::Prior, &[], state.completed_iterations)
        .map_err(|e| RunError::State(e.to_string()))?;
    let index_path = run_dir.join(MEMORY_DIR).join(INDEX_FILE);
    let mut index = EmbeddingIndex::load(&index_path)?;
    index
        .upsert_idea_with(
            kb.idea(id).unwrap(),
            config.memory.embedding_endpoint.as_deref(),
        )
        .map_err(|e| RunError::Provider(AgentError::Transport(e.to_string())))?;
    state.idea_metrics.insert(id, state.baseline_metric);
    kb.save(&run_dir.join(KB_FILE))
        .map_err(|e| RunError::State(e.to_string()))?;
    index.save(&index_path)?;
    state.save(&run_dir.join(STATE_FILE))?;
    Ok(id)
}

/// Copies the best artifacts out of a run directory.
pub fn export(run_dir: &Path, dest: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dest)?;
    for name in ["program.fdl", "features.csv", "metrics.json"] {
        let src = run_dir.join(BEST_DIR).join(name);
        if !src.exists() {
            return Err(RunError::State(format!(
                "{} is missing; did the run finish?",
                src.display()
            )));
        }
        std::fs::copy(&src, dest.join(name))?;
    }
    Ok(())
}
