//! Command-line front end for the clause classification engine: corpus
//! statistics, lexicon building, training, evaluation, prediction, and the
//! three-stage preprocessing ablation, all file-driven and reproducible from
//! the `config.resolved` each command writes beside its outputs.

mod commands;
mod config;
mod outputs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lexclass",
    version,
    about = "Legal clause classification: preprocess, train, evaluate, predict"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Class counts and clause-length histograms over the provided splits.
    Stats(config::CommonArgs),
    /// Build the per-class frequent-word lexicon from the train split.
    Vocab(config::CommonArgs),
    /// Train a classifier; writes the best checkpoint and an epoch log.
    Train(config::CommonArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(config::CommonArgs),
    /// Classify line-delimited JSON records with a trained checkpoint.
    Predict(config::CommonArgs),
    /// Train and evaluate once per preprocessing stage with a shared seed.
    Ablate(config::CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, runner): (
        &config::CommonArgs,
        fn(&config::Resolved) -> anyhow::Result<()>,
    ) = match &cli.command {
        Command::Stats(args) => (args, commands::stats::run),
        Command::Vocab(args) => (args, commands::vocab::run),
        Command::Train(args) => (args, commands::train::run),
        Command::Eval(args) => (args, commands::eval::run),
        Command::Predict(args) => (args, commands::predict::run),
        Command::Ablate(args) => (args, commands::ablate::run),
    };
    let result = config::resolve(args).and_then(|resolved| runner(&resolved));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
