//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mespec", version, about = "Mixed-effects spectral VAR connectivity pipeline")]
pub struct Cli {
    /// Dataset manifest (JSON with sampling_rate_hz, channels, subjects).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Log progress to stderr (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split every subject into band-limited series, one CSV per band.
    Filter(FilterArgs),
    /// Per-subject VAR order selection by information criteria.
    Lagselect(LagselectArgs),
    /// Fit the mixed-effects VAR for every band and target channel.
    Fit(FitArgs),
    /// Connectivity graphs, group differences and heatmaps from a fit bundle.
    Graph(GraphArgs),
    /// Monte Carlo consistency study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BandArgs {
    /// Comma-separated canonical bands (delta, theta, alpha, beta, gamma).
    /// Defaults to all five unless only custom bands are given.
    #[arg(long, value_delimiter = ',')]
    pub bands: Vec<String>,

    /// Custom band `lo:<hz>,hi:<hz>,name:<name>`; repeatable.
    #[arg(long = "band-def")]
    pub band_def: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub bands: BandArgs,
}

#[derive(Debug, Args)]
pub struct LagselectArgs {
    /// Largest lag order tried.
    #[arg(long, default_value_t = 6)]
    pub pmax: usize,

    /// Criterion that picks each subject's order: aic, bic or hq.
    #[arg(long, default_value = "bic")]
    pub criterion: String,

    /// `ols`, `lassle` (cross-validated penalty) or `lassle:<lambda>`.
    #[arg(long, default_value = "ols")]
    pub estimator: String,

    /// Outlier clipping threshold in scaled-MAD units.
    #[arg(long, default_value_t = 4.0)]
    pub outlier_k: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// VAR lag order of the mixed model.
    #[arg(long, default_value_t = 1)]
    pub lag: usize,

    #[command(flatten)]
    pub bands: BandArgs,

    /// Fit the manifest series as they are, without band decomposition.
    #[arg(long, conflicts_with_all = ["bands", "band_def"])]
    pub no_decompose: bool,

    /// Band label of the fits when decomposition is off.
    #[arg(long, default_value = "raw", requires = "no_decompose")]
    pub band_name: String,

    /// Outlier clipping threshold in scaled-MAD units.
    #[arg(long, default_value_t = 4.0)]
    pub outlier_k: f64,

    /// Optimizer starting values, each applied to every variance component.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0])]
    pub starts: Vec<f64>,

    /// Optimizer evaluation budget per variance component.
    #[arg(long, default_value_t = 5000)]
    pub evals_per_dim: usize,

    /// Deviance convergence tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub f_tol: f64,

    /// Simplex-size convergence tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub x_tol: f64,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Fit bundle directory; defaults to `<out>/fits`.
    #[arg(long)]
    pub fits: Option<PathBuf>,

    /// Raw significance level of the edge t-tests.
    #[arg(long, default_value_t = 1e-6)]
    pub alpha: f64,

    /// Magnitude quantile of |estimates| an edge must exceed.
    #[arg(long, default_value_t = 0.8)]
    pub quantile: f64,

    /// Bonferroni family level of the Welch group comparison.
    #[arg(long, default_value_t = 0.05)]
    pub welch_alpha: f64,

    /// Also render the heatmaps as SVG.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (JSON). `seed` is required; other fields default.
    #[arg(long)]
    pub config: PathBuf,

    /// Override the replicate count of the config.
    #[arg(long)]
    pub replicates: Option<usize>,
}
