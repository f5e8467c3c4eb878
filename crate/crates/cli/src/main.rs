//! `gradnovel`: gradient-based novelty detection experiments.

mod config;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use run::{CliError, Command, Run};

#[derive(Parser)]
#[command(name = "gradnovel", version, about = "Novelty detection with backpropagated VAE gradients")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Train a VAE on the inlier training split.
    TrainVae(Common),
    /// Extract feature caches with a trained VAE.
    ExtractFeatures(Common),
    /// Train one detector per feature kind from the caches.
    TrainDetector(Common),
    /// Run the evaluation protocols and write a report.
    Evaluate(Common),
    /// Histogram the per-sample statistics and render an SVG.
    Histogram(Common),
    /// Histogram, class protocol and condition protocol in one run.
    Reproduce(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, args) = match cli.command {
        Sub::TrainVae(a) => (Command::TrainVae, a),
        Sub::ExtractFeatures(a) => (Command::ExtractFeatures, a),
        Sub::TrainDetector(a) => (Command::TrainDetector, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
        Sub::Histogram(a) => (Command::Histogram, a),
        Sub::Reproduce(a) => (Command::Reproduce, a),
    };
    let result = RunConfig::load(&args.config)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))
        .and_then(|cfg| Run::new(command, cfg, args.seed, args.out))
        .and_then(|run| run.execute());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
