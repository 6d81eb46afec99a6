use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use dseval::{run, Cli, Command, Env};

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("DSEVAL_LOG").unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let env = Env {
        scorer_program: std::env::current_exe().ok(),
        ..Env::default()
    };
    if !matches!(cli.command, Command::ScoreJob) {
        let cancel = env.cancel.clone();
        // A second interrupt exits at once.
        let installed = ctrlc::set_handler(move || {
            if cancel.swap(true, std::sync::atomic::Ordering::SeqCst) {
                std::process::exit(130);
            }
            eprintln!("interrupt: draining in-flight episodes");
        });
        if let Err(e) = installed {
            tracing::warn!("no interrupt handler: {e}");
        }
    }
    ExitCode::from(run(cli, &env))
}
