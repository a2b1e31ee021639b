//! Command-line interface definition. Most flags are optional and merge
//! over an optional JSON config file; flags win.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "brace",
    version,
    about = "Compositional regression with clustered, selected coefficients",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark dataset (train/test CSVs + truth).
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler on a dataset and write the chain trace.
    Fit(FitArgs),
    /// Turn a chain trace into selection, intervals, and a point partition.
    Summarize(SummarizeArgs),
    /// Run a simulate/fit/summarize/score grid and aggregate the results.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// JSON config with the same fields as the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Covariance case: dep1 or dep2.
    #[arg(long)]
    pub case: Option<String>,
    /// Autoregressive decay (dep1 only).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Signal-to-noise ratio: mean |nonzero coefficient| / noise sd.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Master seed; required for reproducibility.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// JSON config with the same fields as the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Design matrix CSV (log relative abundances, header of feature names).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Raw count CSV; transformed with the pseudocount recipe before the fit.
    #[arg(long, conflicts_with = "x")]
    pub counts: Option<PathBuf>,
    /// Response CSV (single column).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Zero replacement used with --counts.
    #[arg(long)]
    pub pseudocount: Option<f64>,
    /// Drop features with total abundance below this before transforming.
    #[arg(long)]
    pub min_total_abundance: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_clusters: Option<usize>,
    /// Visit features in random order each sweep instead of 1..p.
    #[arg(long)]
    pub random_sweep: bool,
    /// Gram-aggregate policy: auto, cached, or on-the-fly.
    #[arg(long)]
    pub gram: Option<String>,
    #[arg(long)]
    pub a_sigma: Option<f64>,
    #[arg(long)]
    pub b_sigma: Option<f64>,
    #[arg(long)]
    pub a_gamma: Option<f64>,
    #[arg(long)]
    pub b_gamma: Option<f64>,
    #[arg(long)]
    pub a_alpha: Option<f64>,
    #[arg(long)]
    pub b_alpha: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Output directory for the trace files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SummarizeArgs {
    /// Directory containing beta.csv, scalars.csv, z.csv.
    #[arg(long)]
    pub trace: PathBuf,
    /// Credible level for the selection intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Partition loss: binder or vi.
    #[arg(long, default_value = "binder")]
    pub loss: String,
    /// Random restarts for the partition search.
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    /// Seed for the partition search restarts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Selection rule: ci (credible interval) or inclusion (posterior
    /// inclusion probability threshold).
    #[arg(long, default_value = "ci")]
    pub selection: String,
    /// Threshold used with --selection inclusion.
    #[arg(long, default_value_t = 0.5)]
    pub inclusion_threshold: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Grid config JSON: list of simulation configs, replicate count, chain
    /// settings, and summary options.
    #[arg(long)]
    pub grid: PathBuf,
    /// Maximum concurrent replicates (BRACE_THREADS caps the default).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
