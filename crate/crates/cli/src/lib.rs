//! The `biasprobe` command line: counterfactual probes, StereoSet
//! evaluation, alignment curves and fixture generation.
//!
//! Every command is deterministic given its flags, input files and seed.
//! Failures exit with 2 (configuration), 3 (data) or 4 (backend
//! capability).

pub mod config;
pub mod curve;
pub mod error;
pub mod evaluate;
pub mod fixture;
pub mod output;
pub mod probe;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{CommonArgs, RunConfig};
pub use error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(
    name = "biasprobe",
    version,
    about = "Counterfactual bias probing for language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score template x lexicon counterfactual groups.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the detector over a StereoSet file and report aggregate metrics.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Similarity/conflict alignment curve.
    Curve {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON Lines of {"a": text, "b": text}; the dataset's
        /// stereotype/anti-stereotype option pairs when absent.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Write the miniature StereoSet fixture and a reference-model bundle
    /// into the `--out` directory.
    GenFixture {
        #[command(flatten)]
        common: CommonArgs,
        /// Store attention tensors for every bundle item (large).
        #[arg(long)]
        with_attention: bool,
    },
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Probe { common } => probe::run(&RunConfig::from_args(common)?),
        Command::Evaluate { common } => evaluate::run(&RunConfig::from_args(common)?),
        Command::Curve { common, pairs } => curve::run(&RunConfig::from_args(common)?, pairs.as_deref()),
        Command::GenFixture { common, with_attention } => fixture::run(&RunConfig::from_args(common)?, *with_attention),
    }
}
