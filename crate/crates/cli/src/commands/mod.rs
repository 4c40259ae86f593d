//! Subcommand definitions and dispatch.

use std::ops::Range;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kiqt_core::degrade::Regime;
use kiqt_core::tensorio::{IqtDomain, MaskPattern};

use crate::profile::Profile;

pub mod evaluate;
pub mod report;
pub mod simulate;
pub mod train;
pub mod verify;

/// Seed streams derived from a user seed, so that phantoms, degradations
/// and masks never share random sequences.
pub const PHANTOM_STREAM: u64 = 1;
pub const DEGRADE_STREAM: u64 = 2;
pub const MASK_STREAM: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "kiqt", version, about = "Low-field MRI reconstruction from undersampled k-space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize paired high-field / low-field slices.
    Simulate(SimulateArgs),
    /// Cross-validated training of a network ensemble.
    Train(TrainArgs),
    /// Reconstruct a test set and write metrics and figures.
    Evaluate(EvaluateArgs),
    /// Merge metrics tables of several evaluations.
    Report(ReportArgs),
    /// Check that every artifact listed in a manifest exists unchanged.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of built-in brain phantoms to generate.
    #[arg(long, conflicts_with = "volume", required_unless_present = "volume")]
    pub phantom: Option<usize>,
    /// NIfTI volume to slice instead of phantoms; repeatable.
    #[arg(long)]
    pub volume: Vec<PathBuf>,
    /// Axial slice window `start:end` for volumes.
    #[arg(long, default_value = "0:1", value_parser = parse_range)]
    pub slices: Range<usize>,
    /// Degradation prior.
    #[arg(long, default_value = "ind")]
    pub regime: Regime,
    /// Custom prior file overriding `--regime`.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Phantom edge length; multiple of 8.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub single_thread: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment configuration; profile defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset written by `simulate`.
    #[arg(long, env = "KIQT_DATA_DIR")]
    pub data: PathBuf,
    /// Parent directory of the run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: Profile,
    #[arg(long)]
    pub pattern: Option<MaskPattern>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub domain: Option<IqtDomain>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Run directory name; derived from the configuration when absent.
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub single_thread: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained run directory; repeatable.
    #[arg(long = "run")]
    pub runs: Vec<PathBuf>,
    /// Test dataset written by `simulate`.
    #[arg(long, env = "KIQT_DATA_DIR")]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mask pattern to evaluate; repeatable, defaults to the runs' pattern.
    #[arg(long = "pattern")]
    pub patterns: Vec<MaskPattern>,
    /// Sampling fraction to evaluate; repeatable, defaults to the runs' fraction.
    #[arg(long = "fraction")]
    pub fractions: Vec<f64>,
    /// Mask seed; masks match training when equal to the training seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index of the slice shown in figures.
    #[arg(long, default_value_t = 0)]
    pub figure_slice: usize,
    #[arg(long)]
    pub single_thread: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV, or an evaluation directory containing one; prefix with
    /// `label=` to set the run id. Repeatable.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    /// Table to read from evaluation directories.
    #[arg(long, default_value = "ensemble_metrics.csv")]
    pub table: String,
    /// Merged CSV destination; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Dataset, run or evaluation directory.
    pub dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Report(a) => report::run(&a),
        Command::Verify(a) => verify::run(&a),
    }
}

fn parse_range(s: &str) -> Result<Range<usize>> {
    let (a, b) = s.split_once(':').context("expected `start:end`")?;
    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
    if a >= b {
        bail!("empty range {a}:{b}");
    }
    Ok(a..b)
}

/// Runs `f` on a one-thread pool when `single` is set.
pub(crate) fn in_pool<T: Send>(single: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    if single {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}
