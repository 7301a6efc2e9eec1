use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "balancekit",
    version,
    about = "Balancing weights for comparing several treatment groups"
)]
pub struct Cli {
    /// Worker threads for replicated work; 0 or absent uses every core.
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a simulation design.
    Generate(GenerateArgs),
    /// Fit the multinomial logistic propensity model.
    Fit(FitArgs),
    /// Compute weights and balance diagnostics for a scheme.
    Balance(BalanceArgs),
    /// Drop units with extreme propensity scores.
    Trim(TrimArgs),
    /// Estimate weighted group means and pairwise contrasts.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study for a design.
    Simulate(SimulateArgs),
    /// Tabulate the overlap tilt on a grid over the three-group simplex.
    Ternary(TernaryArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Sample CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "treatment")]
    pub treatment_col: String,
    /// Comma-separated covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Comma-separated treatment labels in group order; defaults to order of
    /// first appearance. The first group is the reference.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitFlags {
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Tolerance on the max-norm of the mean log-likelihood gradient.
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    /// Ridge penalty on slopes.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DesignArgs {
    /// Named simulation design.
    #[arg(long, default_value = "adequate_overlap", conflicts_with = "scenario")]
    pub preset: String,
    /// JSON design file used in place of a preset.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override the sample size.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// ipw, treated:<j>, restricted:<j>, trim, matching, varwt:<j> or overlap.
    #[arg(long, default_value = "overlap")]
    pub scheme: String,
    /// Saved model to use instead of fitting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrimArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Outcome column carried into the trimmed sample.
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Fixed threshold on Σ_j 1/e_j; estimated from the data when absent.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "y")]
    pub outcome_col: String,
    /// ipw, treated:<j>, restricted:<j>, trim, matching, varwt:<j> or overlap.
    #[arg(long, default_value = "overlap")]
    pub scheme: String,
    /// sandwich, bootstrap:<reps> or none.
    #[arg(long, default_value = "sandwich")]
    pub variance: String,
    /// Contrast coefficients, comma-separated, one per group. Repeatable;
    /// defaults to every pairwise difference.
    #[arg(long)]
    pub contrast: Vec<String>,
    /// Required for the bootstrap.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Interval method for the matching-weight estimator.
    #[arg(long, default_value = "bootstrap:1000")]
    pub gmw_interval: String,
    /// Monte Carlo draws for the true estimands.
    #[arg(long, default_value_t = 1_000_000)]
    pub truth_draws: usize,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TernaryArgs {
    /// Grid steps along each edge.
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}
