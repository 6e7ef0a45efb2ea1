use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lca_core::density::DensityKind;
use lca_core::harness::{BaseDataset, ClusterMethod};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "lca",
    version,
    about = "Local component analysis: unsupervised metric learning for Parzen density estimation"
)]
pub struct Cli {
    /// Worker threads for the numerical kernels. Results do not depend on it.
    #[arg(long, global = true, env = "LCA_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic clustering dataset (whitened) and its labels.
    Generate(GenerateArgs),
    /// Fit a metric (LCA) or a Gaussian x Parzen model.
    Fit(FitArgs),
    /// Map data through a fitted model.
    Transform(TransformArgs),
    /// Compare density models by test negative log-likelihood.
    Density(DensityArgs),
    /// Reproduce the benchmark tables.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Rerun a command from the config file written next to its output.
    #[serde(skip)]
    Replay {
        /// Sidecar config file.
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Base dataset: two_blobs, circles or five_gaussians.
    #[arg(long, default_value = "two_blobs")]
    pub base: BaseDataset,
    /// Number of points (default: 600, or 800 for five_gaussians).
    #[arg(long)]
    pub points: Option<usize>,
    /// Standard normal dimensions appended before whitening.
    #[arg(long, default_value_t = 0)]
    pub noise_dims: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output data CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Output label CSV (default: <out> with extension .labels.csv).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    /// Parzen metric learned by EM.
    Lca,
    /// Gaussian x Parzen product with the eigenvalue-threshold split.
    LcaGauss,
    /// Gaussian x Parzen product with the Gaussian-dimension search.
    LcaGaussRed,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::Lca => "lca",
            FitMethod::LcaGauss => "lca-gauss",
            FitMethod::LcaGaussRed => "lca-gauss-red",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmFlags {
    /// Maximum EM iterations (1 gives Manifold Parzen Windows for lca).
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Stop once the relative decrease of the objective is below this.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Ridge added to local covariances (default: 1e-6 * trace(Cov)/d).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Ridge on the global covariance of Gauss-Parzen models (default: --nu).
    #[arg(long)]
    pub nu_global: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StochasticFlags {
    /// Use discounted minibatch updates with subsampled neighbors.
    #[arg(long)]
    pub stochastic: bool,
    /// Weight left on the old local covariance after one pass.
    #[arg(long, default_value_t = 0.6)]
    pub gamma: f64,
    /// Locations per update.
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Neighbors per location.
    #[arg(long, default_value_t = 3000)]
    pub neigh: usize,
    /// Passes over the data.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Input data CSV (header row, one point per row).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "lca")]
    pub method: FitMethod,
    #[command(flatten)]
    pub em: EmFlags,
    #[command(flatten)]
    pub stochastic: StochasticFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TransformArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Keep only the Parzen coordinates of a Gauss-Parzen model.
    #[arg(long)]
    pub parzen_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DensityArgs {
    /// Dataset to split at random, repeatedly (--train-n/--valid-n/--test-n).
    #[arg(long, conflicts_with_all = ["train", "valid", "test"], required_unless_present = "train")]
    pub data: Option<PathBuf>,
    /// Fixed training split (needs --valid and --test).
    #[arg(long, requires_all = ["valid", "test"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 1000)]
    pub valid_n: usize,
    #[arg(long, default_value_t = 3000)]
    pub test_n: usize,
    /// Repetitions with fresh random splits (only with --data).
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Density kinds to evaluate (default: all).
    #[arg(long = "kind", value_delimiter = ',')]
    pub kinds: Vec<DensityKind>,
    /// Ridge candidates as multiples of trace(Cov)/d (default: 10 values from 1e-8 to 1e-1).
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Per-run results CSV; the summary goes to <out> with extension .summary.csv.
    #[arg(long)]
    pub out: PathBuf,
}

/// An EM iteration cap, or `converged`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IterSpec(pub Option<usize>);

impl FromStr for IterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "converged" {
            return Ok(IterSpec(None));
        }
        match s.parse::<usize>() {
            Ok(m) if m > 0 => Ok(IterSpec(Some(m))),
            _ => Err(format!("'{s}' is neither a positive count nor 'converged'")),
        }
    }
}

impl fmt::Display for IterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("converged"),
            Some(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepFlags {
    #[arg(long, default_value = "two_blobs")]
    pub base: BaseDataset,
    /// Points per run (default: 600, or 800 for five_gaussians).
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 4, 8])]
    pub noise_dims: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub em: EmFlags,
    /// Spectral-clustering kernel width as a multiple of the median distance.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_scale: f64,
    /// Directory for long.csv, summary.csv and config.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NoiseSweepArgs {
    #[command(flatten)]
    pub sweep: SweepFlags,
    /// whitened, lca, mpw, lca_iter<k>, lca_gauss, lca_gauss_red.
    #[arg(long, value_delimiter = ',', default_values = ["whitened", "lca", "lca_gauss"])]
    pub methods: Vec<ClusterMethod>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IterationSweepArgs {
    #[command(flatten)]
    pub sweep: SweepFlags,
    /// EM iteration caps; 1 is Manifold Parzen Windows.
    #[arg(long, value_delimiter = ',', default_values = ["1", "2", "5", "10", "converged"])]
    pub iterations: Vec<IterSpec>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SubsampleArgs {
    /// Dataset to split into train and test (default: a synthetic
    /// signal-plus-noise set of --train-n + --test-n points).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_n: usize,
    /// Noise dimensions of the synthetic set.
    #[arg(long, default_value_t = 8)]
    pub noise_dims: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.6, 0.9])]
    pub gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000])]
    pub batches: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 1000, 3000])]
    pub neighs: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ridge added to local covariances (default: 1e-6 * trace(Cov)/d).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Directory for grid.csv and config.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "benchmark", rename_all = "kebab-case")]
pub enum BenchCommand {
    /// Clustering accuracy against the number of noise dimensions.
    NoiseSweep(NoiseSweepArgs),
    /// Clustering accuracy against the number of EM iterations.
    IterationSweep(IterationSweepArgs),
    /// Train and test NLL of stochastic fits over a (gamma, B, N) grid.
    SubsampleGrid(SubsampleArgs),
}

/// Everything needed to rerun a command, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub format_version: u32,
    pub tool_version: String,
    pub run: Command,
}

impl RunConfig {
    pub fn new(run: Command) -> Self {
        Self {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            run,
        }
    }
}
