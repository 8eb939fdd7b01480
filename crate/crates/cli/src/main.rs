mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gcgpn", version, about = "Generalized few-shot learning with graph-convolutional prototype networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(Common),
    /// Build a class-similarity matrix from attributes or a taxonomy.
    BuildOperator(Common),
    /// Train a model and write a checkpoint and per-epoch history.
    Train(Common),
    /// Evaluate a checkpoint on meta-test episodes.
    Eval(Common),
    /// Train and evaluate every configured variant.
    Ablate(Common),
    /// Train and evaluate one model per shot count.
    SweepK(Common),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to evaluate, overriding the file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.checkpoint.is_some() {
            cfg.checkpoint.clone_from(&self.checkpoint);
        }
        cfg.finalize(self.seed, self.out.clone())
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, action): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::BuildOperator(c) => (c, commands::build_operator),
        Command::Train(c) => (c, commands::train_cmd),
        Command::Eval(c) => (c, commands::eval_cmd),
        Command::Ablate(c) => (c, commands::ablate),
        Command::SweepK(c) => (c, commands::sweep_k),
        Command::Gradcheck(c) => (c, commands::gradcheck),
    };
    let cfg = common.config()?;
    commands::prepare(&cfg)?;
    action(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
