//! `topovomp`: generate datasets, train, predict and evaluate from the
//! command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topovomp::vomp::VompError;

use crate::commands::System;
use crate::config::{Config, Overrides};

#[derive(Debug, Parser)]
#[command(name = "topovomp", version, about = "Topology-informed trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a labelled trajectory dataset (synthetic or from CSV logs).
    Generate(Overrides),
    /// Split the dataset, fit the suffix automaton and both mixture models.
    Train(Overrides),
    /// Predict the rest of a trajectory from an observed prefix.
    Predict {
        #[command(flatten)]
        overrides: Overrides,
        /// JSON file with the observed positions at timesteps 1..k.
        #[arg(long)]
        prefix: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "topology")]
        system: System,
    },
    /// Score both systems on the held-out split.
    Eval(Overrides),
}

/// Exit code for an empty training corpus.
const EXIT_EMPTY_CORPUS: u8 = 3;

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(o) => commands::generate(&Config::load(&o)?),
        Command::Train(o) => commands::train(&Config::load(&o)?),
        Command::Predict { overrides, prefix, output, system } => {
            commands::predict_cmd(&Config::load(&overrides)?, &prefix, output.as_deref(), system)
        }
        Command::Eval(o) => commands::eval(&Config::load(&o)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<VompError>(), Some(VompError::EmptyCorpus)) {
                ExitCode::from(EXIT_EMPTY_CORPUS)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
