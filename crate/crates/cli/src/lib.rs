//! Command-line front end: simulate data, fit the mixture sampler, predict
//! at target sites and compare the dependent and independent mixtures.

pub mod commands;
pub mod error;
pub mod io;
pub mod settings;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::CliResult;
use crate::settings::{Overrides, Settings};

#[derive(Parser, Debug)]
#[command(name = "msgp", version, about = "Dependent mixtures of stationary Gaussian processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a simulated dataset and its provenance record.
    Simulate {
        /// Dataset CSV; provenance goes next to it as `<stem>.provenance.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sampler; writes checkpoints, summary.json and occupancy maps.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV of coordinates the lattice must also cover (future targets).
        #[arg(long)]
        cover: Option<PathBuf>,
    },
    /// Posterior predictive mean and variance at target coordinates.
    Predict {
        /// A checkpoint file or a fit output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold out each window in turn and score both models on it.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let settings = Settings::resolve(&cli.overrides)?;
    match &cli.command {
        Command::Simulate { out } => commands::simulate(&settings, out),
        Command::Fit { data, out, cover } => commands::fit(&settings, data, out, cover.as_deref()),
        Command::Predict {
            checkpoint,
            targets,
            out,
        } => commands::predict(&settings, checkpoint, targets, out),
        Command::Compare { data, out } => commands::compare(&settings, data, out),
    }
}
