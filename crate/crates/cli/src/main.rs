//! `rlr`: solve synthetic low-rank recovery instances, sweep phase
//! transitions, benchmark convergence and evaluate theory constants.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 1 for failures
//! while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "rlr", version, about = "Low-rank matrix recovery solvers and experiments")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON file whose keys are the flag names with underscores; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.config {
        Some(path) => RunConfig::from_file(path).and_then(|file| cli.flags.over(file)),
        None => Ok(cli.flags),
    }
    .and_then(|config| commands::run(cli.command, config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
