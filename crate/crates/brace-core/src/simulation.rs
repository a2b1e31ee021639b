//! Synthetic benchmark generator: logistic-normal compositional predictors
//! under two dependence structures, a clustered sparse coefficient vector,
//! and Gaussian noise at a target signal-to-noise ratio.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BraceError, Result};
use crate::preprocessing::{center, center_with, Dataset};

/// Number of slots occupied by the fixed coefficient template.
pub const TEMPLATE_SLOTS: usize = 36;

/// Minimum feature count accepted by the generator.
pub const MIN_FEATURES: usize = 37;

/// Predictor covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceCase {
    /// Autoregressive decay `rho^|i-j|` across all features.
    Dep1,
    /// Distinct within- and between-cluster linear decays on the template
    /// features, independent elsewhere.
    Dep2,
}

impl std::str::FromStr for CovarianceCase {
    type Err = BraceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dep1" => Ok(CovarianceCase::Dep1),
            "dep2" => Ok(CovarianceCase::Dep2),
            other => Err(BraceError::invalid(format!(
                "unknown covariance case '{other}' (expected dep1 or dep2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub case: CovarianceCase,
    /// Autoregressive decay, dep1 only.
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub snr: f64,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_rho() -> f64 {
    0.5
}

fn default_train_fraction() -> f64 {
    0.8
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < MIN_FEATURES {
            return Err(BraceError::invalid(format!(
                "p must be at least {MIN_FEATURES} (the coefficient template needs {TEMPLATE_SLOTS} slots plus a null block), got {}",
                self.p
            )));
        }
        if self.n < 5 {
            return Err(BraceError::invalid(format!(
                "n must be at least 5, got {}",
                self.n
            )));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(BraceError::invalid(format!(
                "snr must be positive, got {}",
                self.snr
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(BraceError::invalid(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.case == CovarianceCase::Dep1 && !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return Err(BraceError::invalid(format!(
                "rho must satisfy |rho| < 1, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Ground truth attached to a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub beta_true: Vec<f64>,
    pub partition_true: Vec<usize>,
    pub sigma_true: f64,
    pub case: CovarianceCase,
    pub rho: f64,
}

/// Uncentered design/response pairs for both splits, in CSV-ready form.
#[derive(Debug, Clone)]
pub struct RawSplit {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub feature_names: Vec<String>,
}

/// The clustered sparse coefficient vector and its partition labels.
///
/// A fixed 36-slot template of eight distinct nonzero values (33 nonzero
/// entries) is followed by `p - 36` zeros. The printed template does not sum
/// to zero, so the mean of the nonzero entries is subtracted from every
/// nonzero entry; this preserves sparsity, ties, and distinctness while
/// making the zero-sum constraint exact.
pub fn build_true_beta(p: usize) -> Result<(DVector<f64>, Vec<usize>)> {
    if p < MIN_FEATURES {
        return Err(BraceError::invalid(format!(
            "p must be at least {MIN_FEATURES}, got {p}"
        )));
    }
    let blocks: [(f64, usize); 9] = [
        (-0.8, 4),
        (-1.41, 6),
        (-1.95, 4),
        (-1.16, 1),
        (0.96, 1),
        (0.0, 3),
        (1.04, 6),
        (0.51, 4),
        (1.95, 7),
    ];
    let mut beta = DVector::zeros(p);
    let mut labels = vec![0usize; p];
    let mut idx = 0;
    let mut next_label = 0;
    for &(value, reps) in &blocks {
        let label = if value == 0.0 {
            0
        } else {
            next_label += 1;
            next_label
        };
        for _ in 0..reps {
            beta[idx] = value;
            labels[idx] = label;
            idx += 1;
        }
    }
    debug_assert_eq!(idx, TEMPLATE_SLOTS);

    let nonzero: Vec<usize> = (0..p).filter(|&j| labels[j] != 0).collect();
    let shift = nonzero.iter().map(|&j| beta[j]).sum::<f64>() / nonzero.len() as f64;
    for &j in &nonzero {
        beta[j] -= shift;
    }
    Ok((beta, labels))
}

/// Predictor covariance for the requested case.
///
/// Dep2 couples only features with nonzero truth labels; the result is
/// repaired to positive-definite by flooring eigenvalues at 1e-6.
pub fn build_covariance(cfg: &SimConfig, partition_true: &[usize]) -> DMatrix<f64> {
    let p = cfg.p;
    match cfg.case {
        CovarianceCase::Dep1 => {
            DMatrix::from_fn(p, p, |i, j| cfg.rho.powi((i as i32 - j as i32).abs()))
        }
        CovarianceCase::Dep2 => {
            let mut sigma = DMatrix::identity(p, p);
            for i in 0..p {
                for j in 0..p {
                    if i == j || partition_true[i] == 0 || partition_true[j] == 0 {
                        continue;
                    }
                    let dist = (i as f64 - j as f64).abs();
                    let v = if partition_true[i] == partition_true[j] {
                        0.75 - 0.015 * dist
                    } else {
                        0.4 - 0.02 * dist
                    };
                    sigma[(i, j)] = v.max(0.0);
                }
            }
            repair_positive_definite(sigma)
        }
    }
}

fn repair_positive_definite(sigma: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let floored = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(1e-6));
    let q = &eig.eigenvectors;
    let repaired = q * DMatrix::from_diagonal(&floored) * q.transpose();
    (&repaired + repaired.transpose()) * 0.5
}

/// Generates the uncentered splits plus ground truth. Deterministic given
/// the config seed.
pub fn simulate_raw(cfg: &SimConfig) -> Result<(RawSplit, SimulationTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (beta_true, partition_true) = build_true_beta(cfg.p)?;
    let nonzero_mean_abs = beta_true.iter().filter(|v| **v != 0.0).map(|v| v.abs()).sum::<f64>()
        / beta_true.iter().filter(|v| **v != 0.0).count() as f64;
    let sigma_true = nonzero_mean_abs / cfg.snr;

    let sigma = build_covariance(cfg, &partition_true);
    let chol = sigma.cholesky().ok_or_else(|| {
        BraceError::numerical("predictor covariance is not positive-definite after repair")
    })?;
    let l = chol.l();

    // Location shift makes the first ten features systematically abundant.
    let loc = DVector::from_fn(cfg.p, |j, _| {
        if j < 10 {
            (0.5 * cfg.p as f64).ln()
        } else {
            0.0
        }
    });

    let n = cfg.n;
    let p = cfg.p;
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let zrow = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let u = &loc + &l * zrow;
        // Softmax with max subtraction, then log: log relative abundances.
        let max = u.max();
        let mut denom = 0.0;
        for j in 0..p {
            denom += (u[j] - max).exp();
        }
        let log_denom = denom.ln();
        for j in 0..p {
            x[(i, j)] = (u[j] - max) - log_denom;
        }
    }

    let y = DVector::from_fn(n, |i, _| {
        let mut s = 0.0;
        for j in 0..p {
            s += x[(i, j)] * beta_true[j];
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        s + sigma_true * eps
    });

    // Seeded split; indices kept in ascending order within each part.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(2, n - 1);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let take = |idx: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
        let xm = DMatrix::from_fn(idx.len(), p, |i, j| x[(idx[i], j)]);
        let yv = DVector::from_fn(idx.len(), |i, _| y[idx[i]]);
        (xm, yv)
    };
    let (x_train, y_train) = take(&train_idx);
    let (x_test, y_test) = take(&test_idx);

    Ok((
        RawSplit {
            x_train,
            y_train,
            x_test,
            y_test,
            feature_names: (1..=p).map(|j| format!("feat_{j}")).collect(),
        },
        SimulationTruth {
            beta_true: beta_true.iter().copied().collect(),
            partition_true,
            sigma_true,
            case: cfg.case,
            rho: cfg.rho,
        },
    ))
}

/// Centered training set, test set centered with the training means, and
/// the ground truth.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<(Dataset, Dataset, SimulationTruth)> {
    let (raw, truth) = simulate_raw(cfg)?;
    let train = center(&raw.x_train, &raw.y_train, raw.feature_names.clone())?;
    let test = center_with(
        &raw.x_test,
        &raw.y_test,
        raw.feature_names,
        &train.x_means,
        train.y_mean,
    )?;
    Ok((train, test, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn config(case: CovarianceCase) -> SimConfig {
        SimConfig {
            n: 60,
            p: 40,
            case,
            rho: 0.5,
            snr: 1.0,
            seed: 42,
            train_fraction: 0.8,
        }
    }

    #[test]
    fn template_projects_to_exact_zero_sum() {
        let (beta, labels) = build_true_beta(100).unwrap();
        // Before projection the nonzero template entries sum to 2.27.
        let raw_sum = 4.0 * -0.8
            + 6.0 * -1.41
            + 4.0 * -1.95
            + -1.16
            + 0.96
            + 6.0 * 1.04
            + 4.0 * 0.51
            + 7.0 * 1.95;
        assert_abs_diff_eq!(raw_sum, 2.27, epsilon = 1e-12);
        assert_abs_diff_eq!(beta.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert_eq!(labels.iter().filter(|&&l| l != 0).count(), 33);
    }

    #[test]
    fn template_interior_zero_block() {
        let (beta, labels) = build_true_beta(50).unwrap();
        // 1-indexed positions 17-19 are the interior null block.
        for j in 16..19 {
            assert_eq!(beta[j], 0.0);
            assert_eq!(labels[j], 0);
        }
        // Trailing block is null too.
        for j in TEMPLATE_SLOTS..50 {
            assert_eq!(beta[j], 0.0);
            assert_eq!(labels[j], 0);
        }
    }

    #[test]
    fn projection_preserves_cluster_ties_and_distinctness() {
        let (beta, labels) = build_true_beta(60).unwrap();
        let mut by_label: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for j in 0..60 {
            if labels[j] != 0 {
                by_label.entry(labels[j]).or_default().push(beta[j]);
            }
        }
        assert_eq!(by_label.len(), 8);
        let mut values: Vec<f64> = Vec::new();
        for (_, vs) in by_label {
            for w in &vs {
                assert_abs_diff_eq!(*w, vs[0], epsilon = 1e-15);
            }
            values.push(vs[0]);
        }
        values.sort_by(f64::total_cmp);
        for pair in values.windows(2) {
            assert!(pair[1] - pair[0] > 1e-6, "cluster values collided");
        }
    }

    #[test]
    fn too_few_features_rejected() {
        assert!(build_true_beta(36).is_err());
        let mut cfg = config(CovarianceCase::Dep1);
        cfg.p = 30;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dep1_adjacent_correlation_is_rho() {
        let cfg = config(CovarianceCase::Dep1);
        let (_, labels) = build_true_beta(cfg.p).unwrap();
        let sigma = build_covariance(&cfg, &labels);
        assert_abs_diff_eq!(sigma[(3, 4)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[(0, 2)], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[(5, 5)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dep2_within_and_between_cluster_formulas() {
        let cfg = config(CovarianceCase::Dep2);
        let (_, labels) = build_true_beta(cfg.p).unwrap();
        // Indices 0 and 2 share the first cluster, distance 2.
        assert_eq!(labels[0], labels[2]);
        // Index 4 belongs to the second cluster.
        assert_ne!(labels[0], labels[4]);
        let mut raw = DMatrix::identity(cfg.p, cfg.p);
        for i in 0..cfg.p {
            for j in 0..cfg.p {
                if i == j || labels[i] == 0 || labels[j] == 0 {
                    continue;
                }
                let dist = (i as f64 - j as f64).abs();
                raw[(i, j)] = if labels[i] == labels[j] {
                    (0.75 - 0.015 * dist).max(0.0)
                } else {
                    (0.4 - 0.02 * dist).max(0.0)
                };
            }
        }
        assert_abs_diff_eq!(raw[(0, 2)], 0.72, epsilon = 1e-12);
        // Distance 30 between different clusters floors at zero.
        assert_eq!(labels[0], labels[1]);
        assert_ne!(labels[0], labels[30]);
        assert_abs_diff_eq!(raw[(0, 30)], 0.0, epsilon = 1e-12);
        // Null-labeled features stay uncorrelated.
        assert_eq!(labels[37], 0);
        assert_abs_diff_eq!(raw[(0, 37)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn covariances_admit_cholesky() {
        for case in [CovarianceCase::Dep1, CovarianceCase::Dep2] {
            let mut cfg = config(case);
            cfg.p = 100;
            let (_, labels) = build_true_beta(cfg.p).unwrap();
            let sigma = build_covariance(&cfg, &labels);
            assert!(sigma.cholesky().is_some(), "{case:?} covariance not PD");
        }
    }

    #[test]
    fn simulated_rows_lie_on_the_simplex_before_log() {
        let cfg = config(CovarianceCase::Dep1);
        let (raw, _) = simulate_raw(&cfg).unwrap();
        for i in 0..raw.x_train.nrows() {
            let s: f64 = (0..cfg.p).map(|j| raw.x_train[(i, j)].exp()).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sigma_true_matches_snr_definition() {
        let cfg = config(CovarianceCase::Dep1);
        let (_, truth) = simulate_raw(&cfg).unwrap();
        let mean_abs: f64 = truth
            .beta_true
            .iter()
            .filter(|v| **v != 0.0)
            .map(|v| v.abs())
            .sum::<f64>()
            / 33.0;
        assert_abs_diff_eq!(truth.sigma_true, mean_abs / cfg.snr, epsilon = 1e-12);
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let cfg = config(CovarianceCase::Dep2);
        let (a, _) = simulate_raw(&cfg).unwrap();
        let (b, _) = simulate_raw(&cfg).unwrap();
        assert_eq!(a.x_train, b.x_train);
        assert_eq!(a.y_test, b.y_test);
    }

    #[test]
    fn split_sizes_follow_train_fraction() {
        let cfg = config(CovarianceCase::Dep1);
        let (raw, _) = simulate_raw(&cfg).unwrap();
        assert_eq!(raw.x_train.nrows(), 48);
        assert_eq!(raw.x_test.nrows(), 12);
        assert_eq!(raw.y_train.len(), 48);
        assert_eq!(raw.y_test.len(), 12);
    }

    #[test]
    fn empirical_noise_sd_tracks_sigma_true() {
        let mut cfg = config(CovarianceCase::Dep1);
        cfg.n = 10_000;
        cfg.seed = 7;
        let (raw, truth) = simulate_raw(&cfg).unwrap();
        let beta = DVector::from_column_slice(&truth.beta_true);
        let resid = &raw.y_train - &raw.x_train * &beta;
        let mean = resid.mean();
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / (resid.len() as f64 - 1.0))
            .sqrt();
        let implied_snr = truth.sigma_true * cfg.snr / sd;
        assert!(
            (implied_snr - cfg.snr).abs() / cfg.snr < 0.05,
            "empirical snr {implied_snr} vs target {}",
            cfg.snr
        );
    }

    #[test]
    fn independent_covariance_gives_exchangeable_columns() {
        // With Sigma = I (rho = 0) and no location shift beyond the first
        // ten, later columns should have comparable means.
        let mut cfg = config(CovarianceCase::Dep1);
        cfg.rho = 0.0;
        cfg.n = 4000;
        let (raw, _) = simulate_raw(&cfg).unwrap();
        let m20 = raw.x_train.column(20).mean();
        let m30 = raw.x_train.column(30).mean();
        assert!((m20 - m30).abs() < 0.1, "{m20} vs {m30}");
    }

    #[test]
    fn train_centering_applied_to_test() {
        let cfg = config(CovarianceCase::Dep1);
        let (train, test, _) = simulate_dataset(&cfg).unwrap();
        for j in 0..cfg.p {
            assert!(train.x.column(j).mean().abs() < 1e-10);
        }
        assert!(train.y.mean().abs() < 1e-10);
        assert_eq!(train.x_means, test.x_means);
        assert_abs_diff_eq!(train.y_mean, test.y_mean, epsilon = 1e-15);
    }
}
