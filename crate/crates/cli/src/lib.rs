//! Command-line pipeline around the `simspace` library.
//!
//! Commands share one run directory, `<out_dir>/run-<hash8>-s<seed>`, where
//! `hash8` is a prefix of the SHA-256 of the resolved configuration without
//! its seed and output directory.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "simspace", version, about = "Train and evaluate variance-constrained, nested retrieval embeddings")]
pub struct Cli {
    /// TOML configuration; unset keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Overrides one configuration key, e.g. `--set aesvc.optim.epochs=50`.
    /// Repeatable; applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic reference and query sets.
    Gen,
    /// Fit PCA on the references; write projections and a retrieval report.
    Pca,
    /// Train the variance-constrained autoencoder on the references.
    TrainAesvc,
    /// Train one nested projection on the autoencoder latents.
    TrainSs2d,
    /// Train a separate projection for every nested size.
    TrainSsd,
    /// Retrieval metrics for every method and dimension.
    Eval,
    /// Cosine-similarity moments, approximation sweep and histograms.
    Theory,
    /// Print the resolved configuration and its run directory.
    ShowConfig,
}

/// Runs one command and returns a human-readable summary.
pub fn execute(cli: &Cli) -> Result<String> {
    let config = RunConfig::resolve(cli.config.as_deref(), &cli.sets, cli.seed, cli.out_dir.clone())?;
    if cli.command == Command::ShowConfig {
        return Ok(format!("# run_dir = {}\n{}", config.run_dir().display(), config.to_toml()));
    }
    let run = Run::open(config)?;
    let outputs = match cli.command {
        Command::Gen => commands::cmd_gen(&run)?,
        Command::Pca => commands::cmd_pca(&run)?,
        Command::TrainAesvc => commands::cmd_train_aesvc(&run)?,
        Command::TrainSs2d => commands::cmd_train_ss2d(&run)?,
        Command::TrainSsd => commands::cmd_train_ssd(&run)?,
        Command::Eval => commands::cmd_eval(&run)?,
        Command::Theory => commands::cmd_theory(&run)?,
        Command::ShowConfig => unreachable!("handled above"),
    };
    Ok(format!(
        "{}\n{}",
        run.dir.display(),
        commands::display(&outputs, &run.dir)
    ))
}
