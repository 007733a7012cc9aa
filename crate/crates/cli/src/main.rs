//! `cbs`: run consensus-based sampling and optimization experiments and
//! write their results as CSV and JSON.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures and interruptions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use config::{ExperimentConfig, SEED_ENV};
use error::CliError;

fn execute(command: &Command) -> Result<(), CliError> {
    let file = command.config_path().map(|p| ExperimentConfig::load(p)).transpose()?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::merge(file, env_seed.as_deref(), command.flags())?;
    match command {
        Command::Optimize(_) => commands::cmd_optimize(cfg),
        Command::Sample(_) => commands::cmd_sample(cfg),
        Command::Theory(_) => commands::cmd_theory(cfg),
        Command::Bench(_) => commands::cmd_bench(cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let CliError::Usage(_) = err {
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(cli.command.name()) {
                    eprintln!("\n{}", sub.render_usage());
                    eprintln!("\nFor more information, try '--help'.");
                }
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
