//! `luria`: batch front-end for the luria-core toolkit.

mod commands;
mod config;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ConvergeArgs, MomentsArgs, PdeArgs, RefdistArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "luria", version, about = "Mutant distributions in growing populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean and variance curves of the mutant count.
    Moments(MomentsArgs),
    /// Kinetic Monte Carlo ensemble at one epsilon.
    Simulate(SimulateArgs),
    /// Limit law by CF inversion, clone sampling or the Lea-Coulson recursion.
    Refdist(RefdistArgs),
    /// Fokker-Planck approximation on a grid.
    Pde(PdeArgs),
    /// Ensembles over a list of epsilons against the limit law.
    Converge(ConvergeArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error(transparent)]
    Core(#[from] luria_core::Error),
}

impl CliError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) => 2,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Moments(args) => commands::moments(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Refdist(args) => commands::refdist(args),
        Command::Pde(args) => commands::pde(args),
        Command::Converge(args) => commands::converge(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
