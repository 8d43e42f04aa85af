//! `netinv`: train classifiers, invert them, reconstruct training-like data,
//! harden against out-of-distribution inputs and produce interpretability
//! reports, all from one config file.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netinv::Error;

use crate::commands::Failure;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "netinv", version, about = "Conditioned-generator network inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input classifier checkpoint.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset_root: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train the classifier every other pipeline inverts.
    TrainClassifier,
    /// Train a conditioned generator against a frozen classifier.
    Invert,
    /// Inversion steered toward training-like samples.
    Reconstruct,
    /// Train a classifier with a garbage class fed by inverted samples.
    OodTrain,
    /// Evaluate a garbage-class classifier on in- and out-of-distribution data.
    OodEval,
    /// PCA, decision-boundary, t-SNE and sparse-autoencoder reports.
    Interpret,
    /// Collect the summaries of all runs under the output root.
    Report,
}

mod exit {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const PRECONDITION: u8 = 4;
    pub const NUMERIC: u8 = 5;
    pub const GATE: u8 = 6;
    pub const DATA: u8 = 7;
}

fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Gate { .. } => exit::GATE,
        Failure::Core(e) => match e {
            Error::Config(_) | Error::Argument(_) => exit::CONFIG,
            Error::Io(_) => exit::IO,
            Error::Precondition(_) | Error::Version { .. } => exit::PRECONDITION,
            Error::NonFinite { .. } | Error::Domain(_) | Error::DegenerateStats(_) | Error::DegenerateFeature(_) => {
                exit::NUMERIC
            }
            Error::Format(_) | Error::Consistency(_) => exit::DATA,
            Error::Image(_) => exit::OTHER,
        },
    }
}

fn run(cli: Cli) -> commands::Outcome {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    if let Some(ckpt) = cli.checkpoint {
        config.checkpoint = Some(ckpt);
    }
    if let Some(root) = cli.dataset_root {
        config.dataset_root = root;
    }
    match cli.command {
        Command::TrainClassifier => commands::train_classifier(config),
        Command::Invert => commands::invert(config),
        Command::Reconstruct => commands::reconstruct(config),
        Command::OodTrain => commands::ood_train(config),
        Command::OodEval => commands::ood_evaluate(config),
        Command::Interpret => commands::interpret(config),
        Command::Report => commands::report(config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(exit_code(&failure))
        }
    }
}
