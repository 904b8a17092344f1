//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "pwgp",
    about = "Posterior-weighted Gaussian process generator for approximately periodic time series",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic approximately periodic dataset.
    Synth(SynthArgs),
    /// Fit the two-stage model to a dataset.
    Fit(FitArgs),
    /// Sample trajectories from a fitted model.
    Sample(SampleArgs),
    /// Score trajectories under a fitted model.
    Score(ScoreArgs),
    /// Rerun a desk-scale experiment and emit its result tables.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for train.csv / test.csv and their metadata.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Create the output directory if it does not exist.
    #[arg(long)]
    pub create: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of repetitions to generate.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Training points picked per repetition.
    #[arg(long, default_value_t = 20)]
    pub points_per_rep: usize,
    /// i.i.d. noise variance added to the test draw.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Drop the envelope from the generator prior (strictly periodic data).
    #[arg(long)]
    pub periodic: bool,
    /// Generate the two-channel dataset.
    #[arg(long)]
    pub two_channels: bool,
    /// Dense test-grid points per repetition.
    #[arg(long, default_value_t = 100)]
    pub dense_grid_per_rep: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training dataset CSV.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Output model JSON path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Override the effective number of repetitions used for noise
    /// rescaling (defaults to the repetition count).
    #[arg(long)]
    pub r_effective: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Fitted model JSON.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Training dataset CSV (the posterior conditions on it).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Output trajectory CSV path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Repetitions to generate.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 100)]
    pub samples_per_rep: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sample without the learned output noise.
    #[arg(long)]
    pub no_output_noise: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Fitted model JSON.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Training dataset CSV.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Trajectory CSV produced by `pwgp sample`.
    #[arg(long, value_name = "FILE")]
    pub trajectories: PathBuf,
    /// Output JSON report path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Table1,
    Table2,
    Table3,
    Fig2,
    Fig4,
    Experiment2d,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Which experiment to rerun.
    #[arg(long, value_enum)]
    pub which: ExperimentKind,
    /// Output directory for result tables and plot data.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Create the output directory if it does not exist.
    #[arg(long)]
    pub create: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
