//! Exact simulation from a multivariate normal conditioned on a linear
//! equality constraint `H theta = q`, and the conditional moments of that
//! distribution.
//!
//! The conditional law of `N(mu, Sigma)` given `H theta = q` is Gaussian with
//!
//! ```text
//! mu_t    = mu + Sigma H' (H Sigma H')^-1 (q - H mu)
//! sigma_t = Sigma - Sigma H' (H Sigma H')^-1 H Sigma
//! ```
//!
//! Sampling avoids factorizing the (singular) `sigma_t`: draw an
//! unconstrained `theta ~ N(mu, Sigma)` and project it onto the constraint,
//! `theta + Sigma H' (H Sigma H')^-1 (q - H theta)`. The projected draw has
//! the conditional law and satisfies the constraint to round-off.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BraceError, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// Mean and covariance of a multivariate normal.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianParams {
    /// Validates dimensions and symmetry. Positive-definiteness is checked
    /// when a Cholesky factor is actually needed.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() != mu.len() {
            return Err(BraceError::invalid(format!(
                "covariance is {}x{} but mean has length {}",
                sigma.nrows(),
                sigma.ncols(),
                mu.len()
            )));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(BraceError::invalid(format!(
                "covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Linear equality constraint `{theta : H theta = q}` with `H` of full row
/// rank and fewer rows than columns.
#[derive(Debug, Clone)]
pub struct HyperplaneConstraint {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl HyperplaneConstraint {
    pub fn new(h: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if h.nrows() != q.len() {
            return Err(BraceError::invalid(format!(
                "constraint matrix has {} rows but value vector has length {}",
                h.nrows(),
                q.len()
            )));
        }
        if h.nrows() >= h.ncols() {
            return Err(BraceError::invalid(format!(
                "constraint must remove fewer dimensions than it has ({} rows, {} cols)",
                h.nrows(),
                h.ncols()
            )));
        }
        if h.clone().rank(1e-10) < h.nrows() {
            return Err(BraceError::invalid(
                "constraint matrix does not have full row rank",
            ));
        }
        Ok(Self { h, q })
    }

    /// Single-row convenience: `{theta : h . theta = q}`.
    pub fn single(h: DVector<f64>, q: f64) -> Result<Self> {
        Self::new(DMatrix::from_rows(&[h.transpose()]), DVector::from_element(1, q))
    }

    pub fn n_constraints(&self) -> usize {
        self.h.nrows()
    }
}

/// Conditional mean and covariance of `params` given the constraint.
///
/// The returned covariance is symmetric positive-semidefinite and annihilated
/// by `H` (the constraint removes `m` dimensions exactly).
pub fn conditional_moments(
    params: &GaussianParams,
    constraint: &HyperplaneConstraint,
) -> Result<GaussianParams> {
    if constraint.h.ncols() != params.dim() {
        return Err(BraceError::invalid(format!(
            "constraint dimension {} does not match distribution dimension {}",
            constraint.h.ncols(),
            params.dim()
        )));
    }
    let w = &params.sigma * constraint.h.transpose(); // K x m
    let gram = &constraint.h * &w; // m x m
    let chol = Cholesky::new(gram).ok_or_else(|| {
        BraceError::numerical(format!(
            "H Sigma H' is singular for constraint with {} row(s)",
            constraint.n_constraints()
        ))
    })?;
    let resid = &constraint.q - &constraint.h * &params.mu;
    let mu_t = &params.mu + &w * chol.solve(&resid);
    let mut sigma_t = &params.sigma - &w * chol.solve(&w.transpose());
    // Exact symmetry is lost to rounding; restore it.
    sigma_t = (&sigma_t + sigma_t.transpose()) * 0.5;
    Ok(GaussianParams { mu: mu_t, sigma: sigma_t })
}

/// Repeated-draw sampler that factorizes `Sigma` and `H Sigma H'` once.
pub struct HyperplaneSampler {
    mu: DVector<f64>,
    chol_sigma: Cholesky<f64, Dyn>,
    h: DMatrix<f64>,
    q: DVector<f64>,
    w: DMatrix<f64>,
    chol_gram: Cholesky<f64, Dyn>,
}

impl HyperplaneSampler {
    pub fn new(params: &GaussianParams, constraint: &HyperplaneConstraint) -> Result<Self> {
        if constraint.h.ncols() != params.dim() {
            return Err(BraceError::invalid(format!(
                "constraint dimension {} does not match distribution dimension {}",
                constraint.h.ncols(),
                params.dim()
            )));
        }
        let chol_sigma = Cholesky::new(params.sigma.clone()).ok_or_else(|| {
            BraceError::numerical("covariance is not positive-definite (Cholesky failed)")
        })?;
        let w = &params.sigma * constraint.h.transpose();
        let gram = &constraint.h * &w;
        let chol_gram = Cholesky::new(gram).ok_or_else(|| {
            BraceError::numerical(format!(
                "H Sigma H' is singular for constraint with {} row(s)",
                constraint.n_constraints()
            ))
        })?;
        Ok(Self {
            mu: params.mu.clone(),
            chol_sigma,
            h: constraint.h.clone(),
            q: constraint.q.clone(),
            w,
            chol_gram,
        })
    }

    /// One draw whose marginal law is the conditional distribution and which
    /// satisfies `H theta = q` to round-off.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.mu.len();
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
        let mut theta = &self.mu + self.chol_sigma.l() * z;
        // Project onto the hyperplane; a second pass mops up round-off.
        for _ in 0..2 {
            let resid = &self.q - &self.h * &theta;
            theta += &self.w * self.chol_gram.solve(&resid);
        }
        theta
    }
}

/// One-shot draw; see [`HyperplaneSampler`] for repeated draws.
pub fn sample_hyperplane_gaussian<R: Rng + ?Sized>(
    params: &GaussianParams,
    constraint: &HyperplaneConstraint,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(HyperplaneSampler::new(params, constraint)?.sample(rng))
}
