//! featforge command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use featforge::orchestrator::{self, RunConfig, RunError};

#[derive(Parser)]
#[command(
    name = "featforge",
    version,
    about = "Autonomous feature engineering over event logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a fresh run from a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override max_iterations.
        #[arg(long)]
        iterations: Option<u32>,
        /// Override the bandit RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Ablation: skip the LLM critics (the mechanical code pre-check
        /// still runs).
        #[arg(long)]
        no_critics: bool,
        /// Ablation: disable the long/short-term memory system.
        #[arg(long)]
        no_memory: bool,
        /// Ablation: replace UCB selection with uniform-random selection.
        #[arg(long)]
        no_ucb: bool,
    },
    /// Continue an interrupted run to its iteration budget.
    Resume {
        #[arg(long)]
        run: PathBuf,
    },
    /// Copy the best program, feature table and metrics somewhere else.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dest: PathBuf,
    },
    /// Print the per-iteration table and write report.md.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Add a prior idea to a persisted run; the next resume sees it.
    InjectIdea {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        text: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            iterations,
            seed,
            no_critics,
            no_memory,
            no_ucb,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(n) = iterations {
                cfg.max_iterations = n;
            }
            if let Some(s) = seed {
                cfg.bandit.rng_seed = s;
            }
            cfg.disable_critics |= no_critics;
            cfg.disable_memory |= no_memory;
            cfg.disable_ucb |= no_ucb;
            cfg.validate()?;
            let result = orchestrator::run(cfg)?;
            println!(
                "run complete: {} iterations, best auc {:.6}",
                result.iterations, result.best_metric
            );
            println!("artifacts in {}", result.run_dir.display());
            Ok(())
        }
        Command::Resume { run } => {
            let result = orchestrator::resume_run(&run)?;
            println!(
                "resume complete: {} iterations, best auc {:.6}",
                result.iterations, result.best_metric
            );
            Ok(())
        }
        Command::Export { run, dest } => {
            orchestrator::export(&run, &dest)?;
            println!("exported best artifacts to {}", dest.display());
            Ok(())
        }
        Command::Report { run } => {
            let table = orchestrator::report::write_report(&run)?;
            print!("{table}");
            println!("wrote {}", run.join("report.md").display());
            Ok(())
        }
        Command::InjectIdea { run, text } => {
            let id = orchestrator::inject_idea(&run, &text)?;
            println!("injected idea {id}");
            Ok(())
        }
    }
}
