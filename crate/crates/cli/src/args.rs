use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lorec::estimators::EstimatorKind;
use lorec::model_gen::ModelFamily;
use lorec::solver::{SolverOptions, DEFAULT_EPSILON, DEFAULT_MAX_ITER, LIPSCHITZ};
use serde::Serialize;

use crate::checks::Suite;

#[derive(Debug, Parser)]
#[command(name = "lorec", version, about = "Low-rank plus sparse covariance estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic model (and optionally a Gaussian sample from it).
    Generate(GenerateArgs),
    /// Decompose a covariance matrix, or the sample covariance of data.
    Decompose(DecomposeArgs),
    /// Run the Monte-Carlo comparison of estimators.
    Simulate(SimulateArgs),
    /// Rolling minimum-variance portfolio backtest.
    Backtest(BacktestArgs),
    /// Run a self-check suite on random instances.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Relative-change stopping tolerance.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Inverse step size; at least 2.
    #[arg(long, default_value_t = LIPSCHITZ)]
    pub step_l: f64,
    /// Leave the diagonal of the sparse part unpenalized.
    #[arg(long)]
    pub no_diag_penalty: bool,
}

impl SolverArgs {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            step_l: self.step_l,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            penalize_diagonal: !self.no_diag_penalty,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub family: ModelFamily,
    #[arg(long)]
    pub p: usize,
    /// Also draw this many Gaussian observations into data.csv.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecomposeArgs {
    /// Covariance matrix CSV, or observations CSV with --data.
    pub input: PathBuf,
    /// Treat the input as an n×p observation matrix.
    #[arg(long)]
    pub data: bool,
    #[arg(long, required_unless_present = "cv", conflicts_with = "cv")]
    pub lambda: Option<f64>,
    #[arg(long, required_unless_present = "cv", conflicts_with = "cv")]
    pub rho: Option<f64>,
    /// Pick the penalties by k-fold cross-validation (needs --data).
    #[arg(long, requires = "data")]
    pub cv: bool,
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Lower end of each log-spaced grid as a fraction of its top.
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_GRID_FLOOR)]
    pub grid_floor: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Hard-threshold off-diagonal input entries below this level first.
    #[arg(long)]
    pub threshold_input: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub family: ModelFamily,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated: lorec, lorec_thresholded_input, sample, hard_threshold, shrink_to_identity.
    #[arg(long, value_delimiter = ',', default_value = "lorec,sample,hard_threshold,shrink_to_identity")]
    pub estimators: Vec<EstimatorKind>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Lower end of each log-spaced grid as a fraction of its top.
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_GRID_FLOOR)]
    pub grid_floor: f64,
    /// Input threshold for lorec_thresholded_input; defaults to sqrt(log p / n).
    #[arg(long)]
    pub threshold_input: Option<f64>,
    /// Worker threads for replications.
    #[arg(long, env = "LOREC_JOBS", default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BacktestArgs {
    /// Returns CSV with header `date,TICKER1,...` and YYYY-MM dates.
    #[arg(long)]
    pub returns: PathBuf,
    #[arg(long, default_value = "lorec")]
    pub estimator: EstimatorKind,
    /// Target expected return; omit for the global minimum-variance portfolio.
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<f64>,
    /// Multiply monthly returns by 12 on ingestion.
    #[arg(long)]
    pub annualize: bool,
    #[arg(long, default_value_t = lorec::portfolio::DEFAULT_WINDOW_MONTHS)]
    pub window_months: usize,
    #[arg(long, default_value_t = lorec::portfolio::DEFAULT_TUNING_LOOKBACK_YEARS)]
    pub lookback_years: usize,
    /// Values per penalty axis in the tuning grid.
    #[arg(long, default_value_t = 5)]
    pub grid_size: usize,
    /// Lower end of each log-spaced grid as a fraction of its top.
    #[arg(long, default_value_t = lorec::tuning::DEFAULT_GRID_FLOOR)]
    pub grid_floor: f64,
    #[arg(long)]
    pub threshold_input: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Number of random instances; each suite has its own default.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write check.json and a manifest here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
