//! Bayesian linear regression with compositional (zero-sum-constrained)
//! predictors, where the coefficients are clustered and selected by a
//! spiked Dirichlet-process prior whose base measure lives on the
//! constraint hyperplane.
//!
//! The crate provides the full pipeline: count preprocessing, the collapsed
//! Gibbs sampler, posterior summaries, a synthetic-benchmark generator, and
//! recovery metrics. See the `brace` CLI for file-based runs.

pub mod constrained;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod marginal;
pub mod metrics;
pub mod preprocessing;
pub mod quadrature;
pub mod seed;
pub mod simulation;
pub mod summary;

pub use constrained::{
    conditional_moments, sample_hyperplane_gaussian, GaussianParams, HyperplaneConstraint,
    HyperplaneSampler,
};
pub use error::{BraceError, Result};
pub use gibbs::{
    run_chain, ChainConfig, ChainTrace, GibbsSampler, GibbsState, Hyperparams,
};
pub use marginal::{cluster_frequencies, log_marginal_y, ClusterFrequencies, GramPolicy};
pub use metrics::{
    adjusted_rand_index, l2_loss, prediction_error, selection_errors, EvalReport,
};
pub use preprocessing::{center, center_with, to_log_relative_abundance, CountMatrix, Dataset};
pub use simulation::{
    build_covariance, build_true_beta, simulate_dataset, simulate_raw, CovarianceCase, RawSplit,
    SimConfig, SimulationTruth,
};
pub use summary::{
    absorb_unselected, coclustering_matrix, credible_interval_select, point_partition,
    PartitionLoss, PosteriorSummary,
};
