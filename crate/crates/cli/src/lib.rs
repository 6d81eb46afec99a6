//! Command-line driver: evaluation runs, suite validation, shortcut
//! filtering, competition curation and trajectory synthesis.

pub mod commands;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod report;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use dseval_core::eval::{InProcessScorer, ScoringIsolation, SubprocessScorer};

pub use error::{CliError, CliResult, ErrorKind};
pub use manifest::{RunManifest, RunOpts};

#[derive(Debug, Parser)]
#[command(
    name = "dseval",
    version,
    about = "Evaluate and train data-science agents in sandboxed workers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every task against every model and write a report.
    Eval(RunOpts),
    /// Check a suite's manifests, checksums and task quality.
    Validate {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero when any task is flagged.
        #[arg(long)]
        strict: bool,
    },
    /// Flag tasks the judge models answer without seeing the data.
    Shortcut {
        #[command(flatten)]
        run: RunOpts,
        /// Correct judges needed to flag a task.
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Filter crawled competition records through the intake rules.
    Curate {
        /// Record file or directory (JSON or TOML).
        #[arg(long)]
        records: PathBuf,
        /// Slug list replacing the shipped exclusions.
        #[arg(long)]
        exclusions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate, sample, judge and export training trajectories.
    Synth {
        #[command(flatten)]
        run: RunOpts,
        /// Synthesis settings (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    #[command(hide = true)]
    ScoreJob,
}

/// Process-wide services a command needs.
#[derive(Clone, Default)]
pub struct Env {
    pub cancel: Arc<AtomicBool>,
    /// Program used for isolated metric scoring; scores in-process when unset.
    pub scorer_program: Option<PathBuf>,
    /// Suppresses the report table on stdout.
    pub quiet: bool,
}

impl Env {
    pub fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    pub fn scorer(&self) -> Arc<dyn ScoringIsolation> {
        match &self.scorer_program {
            Some(p) => Arc::new(SubprocessScorer {
                program: p.clone(),
                args: vec!["score-job".into()],
            }),
            None => Arc::new(InProcessScorer::default()),
        }
    }
}

/// Runs one command and maps the result to a process exit code.
pub fn run(cli: Cli, env: &Env) -> u8 {
    let result: CliResult<()> = match cli.command {
        Command::Eval(opts) => {
            eval::cmd_eval(&opts, env).and_then(|(_, fatal)| fatal.map_or(Ok(()), Err))
        }
        Command::Validate { suite, out, strict } => {
            commands::cmd_validate(&suite, out.as_deref(), strict).map(drop)
        }
        Command::Shortcut { run, k } => commands::cmd_shortcut(&run, k, env).map(drop),
        Command::Curate {
            records,
            exclusions,
            out,
        } => commands::cmd_curate(&records, exclusions.as_deref(), out.as_deref()).map(drop),
        Command::Synth { run, config } => commands::cmd_synth(&run, &config, env).map(drop),
        Command::ScoreJob => commands::cmd_score_job(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
