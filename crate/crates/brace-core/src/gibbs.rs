//! The full posterior sampler: collapsed label sweeps, constrained draws of
//! the cluster values, conjugate variance updates, and the concentration
//! update.
//!
//! One iteration runs the four blocks in order:
//!
//! 1. `update_labels` - every feature is visited once; candidate
//!    destinations (spike, each existing cluster, one fresh cluster) are
//!    scored by prior weight times the collapsed marginal, with the cluster
//!    values integrated out.
//! 2. `update_theta` - the cluster values are redrawn from their Gaussian
//!    full conditional restricted to the hyperplane `f . theta = 0`, so the
//!    reconstructed coefficients always sum to zero.
//! 3. `update_variances` - conjugate inverse-gamma draws for the noise
//!    variance and the base-measure variance.
//! 4. `update_concentration` - the auxiliary-variable beta/gamma-mixture
//!    update for the concentration, driven by the nonzero-feature count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::constrained::{GaussianParams, HyperplaneConstraint, HyperplaneSampler};
use crate::error::{BraceError, Result};
use crate::marginal::{Candidate, GramPolicy, SweepEngine};
use crate::preprocessing::Dataset;

/// Tolerance on the zero-sum constraint for every stored coefficient vector.
pub const BETA_SUM_TOL: f64 = 1e-8;

/// Clamp range for the variance draws. The non-informative IG(0.001, 0.001)
/// prior is heavy-tailed enough that prior-regime draws (K <= 1) overflow
/// f64; the clamp keeps the chain finite without touching data-informed
/// draws.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const VARIANCE_CEILING: f64 = 1e12;

/// Prior hyperparameters. All strictly positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub alpha0: f64,
}

impl Hyperparams {
    /// Non-informative defaults, with the concentration prior scaled to the
    /// feature count: `a_alpha = 1/(0.75 log p)^2`, `b_alpha = a_alpha/sqrt(p)`.
    pub fn defaults_for(p: usize) -> Self {
        let logp = (p.max(2) as f64).ln();
        let a_alpha = 1.0 / (0.75 * logp).powi(2);
        Self {
            a_sigma: 0.001,
            b_sigma: 0.001,
            a_gamma: 0.001,
            b_gamma: 0.001,
            a_alpha,
            b_alpha: a_alpha / (p.max(2) as f64).sqrt(),
            alpha0: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("alpha0", self.alpha0),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BraceError::invalid(format!(
                    "hyperparameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Chain length, seed, and initialization knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init_clusters: usize,
    /// Visit features in a fresh random order each sweep instead of 1..p.
    #[serde(default)]
    pub random_sweep: bool,
    #[serde(default)]
    pub gram: GramPolicy,
}

impl ChainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            n_iter: 5000,
            burn_in: 3000,
            thin: 1,
            seed,
            init_clusters: 5,
            random_sweep: false,
            gram: GramPolicy::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(BraceError::invalid("n_iter must be positive"));
        }
        if self.burn_in >= self.n_iter {
            return Err(BraceError::invalid(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(BraceError::invalid("thin must be positive"));
        }
        if self.init_clusters == 0 {
            return Err(BraceError::invalid("init_clusters must be positive"));
        }
        Ok(())
    }
}

/// Snapshot of the sampler state. Label 0 is the spike; `theta[k-1]` is the
/// shared value of cluster `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsState {
    pub z: Vec<usize>,
    #[serde(with = "crate::io::dvector_serde")]
    pub theta: DVector<f64>,
    pub sigma2: f64,
    pub gamma2: f64,
    pub alpha: f64,
}

impl GibbsState {
    /// Coefficients reconstructed from labels and cluster values.
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_fn(self.z.len(), |j, _| match self.z[j] {
            0 => 0.0,
            k => self.theta[k - 1],
        })
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }
}

/// Per-iteration records of the chain, post burn-in and thinning.
#[derive(Debug, Clone, Default)]
pub struct ChainTrace {
    pub feature_names: Vec<String>,
    pub beta: Vec<DVector<f64>>,
    pub z: Vec<Vec<usize>>,
    pub sigma2: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k: Vec<usize>,
    pub log_marginal: Vec<f64>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }
}

/// Draws `1/X` where `X ~ Gamma(shape, rate)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(shape, 1.0 / rate).expect("inverse-gamma parameters must be positive");
    1.0 / gamma.sample(rng)
}

/// Shape and rate of the base-variance full conditional. The shape increment
/// is `(K-1)/2`: the constraint removes one free dimension, and states with
/// `K <= 1` fall back to the prior.
pub fn gamma2_full_conditional(hp: &Hyperparams, theta: &DVector<f64>) -> (f64, f64) {
    let k = theta.len();
    let incr = if k >= 1 { (k as f64 - 1.0) / 2.0 } else { 0.0 };
    (hp.a_gamma + incr, hp.b_gamma + 0.5 * theta.dot(theta))
}

/// Shape and rate of the noise-variance full conditional given the residual
/// sum of squares.
pub fn sigma2_full_conditional(hp: &Hyperparams, n: usize, resid2: f64) -> (f64, f64) {
    (hp.a_sigma + n as f64 / 2.0, hp.b_sigma + 0.5 * resid2)
}

/// One auxiliary-variable update of the concentration given the current
/// number of clusters `k` and nonzero features `p_z`.
pub fn update_concentration_value<R: Rng + ?Sized>(
    alpha: f64,
    k: usize,
    p_z: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> f64 {
    concentration_step(alpha, k, p_z, hp, rng).0
}

/// Concentration update exposing the auxiliary beta draw, which is `None`
/// when there are no nonzero features and the prior is used directly.
pub fn concentration_step<R: Rng + ?Sized>(
    alpha: f64,
    k: usize,
    p_z: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> (f64, Option<f64>) {
    if p_z == 0 {
        let draw = Gamma::new(hp.a_alpha, 1.0 / hp.b_alpha)
            .expect("valid prior")
            .sample(rng);
        return (draw, None);
    }
    let eta: f64 = Beta::new(alpha + 1.0, p_z as f64)
        .expect("valid beta parameters")
        .sample(rng);
    let rate = hp.b_alpha - eta.ln();
    let w_big = hp.a_alpha + k as f64 - 1.0;
    let w_small = p_z as f64 * rate;
    let shape = if rng.random::<f64>() * (w_big + w_small) < w_big {
        hp.a_alpha + k as f64
    } else {
        hp.a_alpha + k as f64 - 1.0
    };
    let draw = Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma parameters")
        .sample(rng);
    (draw, Some(eta))
}

/// Initial state: features are binned by their marginal score `X'y`, with
/// the smallest-|score| decile spiked; the cluster values are then drawn
/// from their full conditional so the constraint holds from the start.
pub fn init_state<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &ChainConfig,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<GibbsState> {
    let p = data.p();
    if cfg.init_clusters > p {
        return Err(BraceError::invalid(format!(
            "init_clusters ({}) exceeds feature count ({p})",
            cfg.init_clusters
        )));
    }
    let z = initial_labels(data, cfg.init_clusters);
    let sigma2 = data.y.dot(&data.y) / (data.n() as f64 - 1.0).max(1.0);
    let mut state = GibbsState {
        z,
        theta: DVector::zeros(0),
        sigma2: sigma2.max(f64::MIN_POSITIVE),
        gamma2: 1.0,
        alpha: hp.a_alpha / hp.b_alpha,
    };
    let engine = SweepEngine::new(data, &state.z, cfg.gram)?;
    state.theta = draw_theta(&engine, state.sigma2, state.gamma2, rng)?;
    Ok(state)
}

fn initial_labels(data: &Dataset, init_clusters: usize) -> Vec<usize> {
    let p = data.p();
    let scores = data.x.transpose() * &data.y;
    let mut by_magnitude: Vec<usize> = (0..p).collect();
    by_magnitude.sort_by(|&a, &b| scores[a].abs().total_cmp(&scores[b].abs()));
    let n_spike = p / 10;
    let mut z = vec![0usize; p];
    let mut rest: Vec<usize> = by_magnitude[n_spike..].to_vec();
    rest.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let m = rest.len();
    if m == 0 {
        return z;
    }
    let bins = init_clusters.min(m);
    for (i, &j) in rest.iter().enumerate() {
        z[j] = i * bins / m + 1;
    }
    z
}

/// Draw of the cluster values from their constrained Gaussian full
/// conditional at the engine's current labels.
fn draw_theta<R: Rng + ?Sized>(
    engine: &SweepEngine,
    sigma2: f64,
    gamma2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let k = engine.k();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    if k == 1 {
        // f1 * theta1 = 0 pins the lone cluster value at zero.
        return Ok(DVector::zeros(1));
    }
    let (s, b) = engine.aggregates();
    let lambda = s / sigma2 + DMatrix::identity(k, k) / gamma2;
    let chol = Cholesky::new(lambda).ok_or_else(|| {
        BraceError::numerical_with_state(
            "cluster-value precision is not positive-definite",
            serde_json::json!({"k": k, "sigma2": sigma2, "gamma2": gamma2}).to_string(),
        )
    })?;
    let mu = chol.solve(&(&b / sigma2));
    let mut sigma_theta = chol.inverse();
    sigma_theta = (&sigma_theta + sigma_theta.transpose()) * 0.5;
    let params = GaussianParams::new(mu, sigma_theta)?;
    let f = DVector::from_fn(k, |i, _| engine.cluster_sizes()[i] as f64);
    let constraint = HyperplaneConstraint::single(f, 0.0)?;
    let sampler = HyperplaneSampler::new(&params, &constraint)?;
    Ok(sampler.sample(rng))
}

/// The sampler: owns the aggregate engine, the scalar state, and the RNG.
pub struct GibbsSampler {
    engine: SweepEngine,
    theta: DVector<f64>,
    sigma2: f64,
    gamma2: f64,
    alpha: f64,
    hp: Hyperparams,
    random_sweep: bool,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    pub fn new(data: &Dataset, cfg: &ChainConfig, hp: &Hyperparams) -> Result<Self> {
        cfg.validate()?;
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = init_state(data, cfg, hp, &mut rng)?;
        Self::with_state(data, state, cfg, hp, rng)
    }

    /// Resume from an explicit state (used by tests to pin configurations).
    pub fn with_state(
        data: &Dataset,
        state: GibbsState,
        cfg: &ChainConfig,
        hp: &Hyperparams,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let engine = SweepEngine::new(data, &state.z, cfg.gram)?;
        if state.theta.len() != engine.k() {
            return Err(BraceError::invalid(format!(
                "state has {} cluster values for {} clusters",
                state.theta.len(),
                engine.k()
            )));
        }
        Ok(Self {
            engine,
            theta: state.theta,
            sigma2: state.sigma2,
            gamma2: state.gamma2,
            alpha: state.alpha,
            hp: hp.clone(),
            random_sweep: cfg.random_sweep,
            rng,
        })
    }

    pub fn state(&self) -> GibbsState {
        GibbsState {
            z: self.engine.labels().to_vec(),
            theta: self.theta.clone(),
            sigma2: self.sigma2,
            gamma2: self.gamma2,
            alpha: self.alpha,
        }
    }

    pub fn k(&self) -> usize {
        self.engine.k()
    }

    pub fn set_sigma2(&mut self, v: f64) {
        self.sigma2 = v;
    }

    pub fn set_gamma2(&mut self, v: f64) {
        self.gamma2 = v;
    }

    pub fn set_alpha(&mut self, v: f64) {
        self.alpha = v;
    }

    pub fn set_theta(&mut self, theta: DVector<f64>) {
        assert_eq!(theta.len(), self.engine.k());
        self.theta = theta;
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// One full pass over the features. After the sweep the stored cluster
    /// values are stale; `update_theta` must run before coefficients are
    /// read.
    pub fn update_labels(&mut self) -> Result<()> {
        let p = self.engine.p();
        let mut order: Vec<usize> = (0..p).collect();
        if self.random_sweep {
            // Fisher-Yates, driven by the chain RNG for reproducibility.
            for i in (1..p).rev() {
                let j = self.rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
        for &j in &order {
            self.update_one_label(j)?;
        }
        debug_assert_eq!(
            self.engine.nonzero_count() + self.engine.spike_count(),
            p,
            "cluster bookkeeping lost a feature"
        );
        Ok(())
    }

    fn update_one_label(&mut self, j: usize) -> Result<()> {
        let p = self.engine.p() as f64;
        self.engine.detach(j);
        let scratch = self.engine.scratch(j);
        let k = self.engine.k();
        let m0 = self.engine.spike_count() as f64;
        let p_z = self.engine.nonzero_count() as f64;

        // Collapsed prior weights: spike mass from the two-point Dirichlet,
        // the rest split urn-style among existing and fresh clusters.
        let psi0 = (m0 + self.hp.alpha0 / 2.0) / (p - 1.0 + self.hp.alpha0);
        let denom = p_z + self.alpha;

        let mut log_weights = Vec::with_capacity(k + 2);
        let mut candidates = Vec::with_capacity(k + 2);
        candidates.push(Candidate::Spike);
        log_weights.push(psi0.ln());
        for t in 0..k {
            candidates.push(Candidate::Existing(t));
            log_weights
                .push(((1.0 - psi0) * self.engine.cluster_sizes()[t] as f64 / denom).ln());
        }
        candidates.push(Candidate::Fresh);
        log_weights.push(((1.0 - psi0) * self.alpha / denom).ln());

        for (lw, cand) in log_weights.iter_mut().zip(&candidates) {
            *lw += self
                .engine
                .log_marginal_candidate(&scratch, *cand, self.sigma2, self.gamma2)?;
        }

        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(BraceError::numerical_with_state(
                "all label candidates have zero posterior weight",
                serde_json::json!({
                    "feature": j, "sigma2": self.sigma2, "gamma2": self.gamma2,
                    "alpha": self.alpha, "f": self.engine.cluster_sizes(),
                })
                .to_string(),
            ));
        }
        let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let u = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = candidates[candidates.len() - 1];
        for (w, cand) in weights.iter().zip(&candidates) {
            acc += w;
            if u < acc {
                chosen = *cand;
                break;
            }
        }
        self.engine.attach(scratch, chosen);
        Ok(())
    }

    /// Redraws the cluster values from their constrained full conditional.
    pub fn update_theta(&mut self) -> Result<()> {
        self.theta = draw_theta(&self.engine, self.sigma2, self.gamma2, &mut self.rng)?;
        Ok(())
    }

    /// Conjugate inverse-gamma updates for the base and noise variances.
    pub fn update_variances(&mut self) -> Result<()> {
        let (shape_g, rate_g) = gamma2_full_conditional(&self.hp, &self.theta);
        self.gamma2 = sample_inverse_gamma(shape_g, rate_g, &mut self.rng)
            .clamp(VARIANCE_FLOOR, VARIANCE_CEILING);

        let resid2 = self.residual_sum_of_squares();
        let (shape_s, rate_s) = sigma2_full_conditional(&self.hp, self.engine.n(), resid2);
        self.sigma2 = sample_inverse_gamma(shape_s, rate_s, &mut self.rng)
            .clamp(VARIANCE_FLOOR, VARIANCE_CEILING);
        Ok(())
    }

    /// `||y - X_z theta||^2` from the cached aggregates.
    pub fn residual_sum_of_squares(&self) -> f64 {
        let k = self.engine.k();
        if k == 0 {
            return self.engine.yty();
        }
        let (s, b) = self.engine.aggregates();
        let quad = self.theta.dot(&(&s * &self.theta));
        (self.engine.yty() - 2.0 * self.theta.dot(&b) + quad).max(0.0)
    }

    /// Auxiliary-variable update of the concentration.
    pub fn update_concentration(&mut self) {
        self.alpha = update_concentration_value(
            self.alpha,
            self.engine.k(),
            self.engine.nonzero_count(),
            &self.hp,
            &mut self.rng,
        );
    }

    /// One full iteration of the four blocks.
    pub fn sweep(&mut self) -> Result<()> {
        self.update_labels()?;
        self.update_theta()?;
        self.update_variances()?;
        self.update_concentration();
        Ok(())
    }

    fn record(&self, trace: &mut ChainTrace, iteration: usize) -> Result<()> {
        let state = self.state();
        let beta = state.beta();
        let sum: f64 = beta.iter().sum();
        if sum.abs() > BETA_SUM_TOL {
            return Err(BraceError::numerical_with_state(
                format!("zero-sum constraint violated at iteration {iteration}: |1'beta| = {sum:e}"),
                serde_json::to_string(&state).unwrap_or_default(),
            ));
        }
        trace.beta.push(beta);
        trace.z.push(state.z);
        trace.sigma2.push(state.sigma2);
        trace.gamma2.push(state.gamma2);
        trace.alpha.push(state.alpha);
        trace.k.push(state.theta.len());
        trace
            .log_marginal
            .push(self.engine.log_marginal_current(self.sigma2, self.gamma2)?);
        Ok(())
    }
}

/// Runs the full chain: init, `n_iter` sweeps, recording every `thin`-th
/// post-burn-in state. Deterministic given the seed.
pub fn run_chain(data: &Dataset, cfg: &ChainConfig, hp: &Hyperparams) -> Result<ChainTrace> {
    let mut sampler = GibbsSampler::new(data, cfg, hp)?;
    let mut trace = ChainTrace {
        feature_names: data.feature_names.clone(),
        ..Default::default()
    };
    for iteration in 0..cfg.n_iter {
        sampler.sweep().map_err(|e| attach_iteration(e, iteration))?;
        if iteration >= cfg.burn_in && (iteration - cfg.burn_in) % cfg.thin == 0 {
            sampler
                .record(&mut trace, iteration)
                .map_err(|e| attach_iteration(e, iteration))?;
        }
    }
    Ok(trace)
}

fn attach_iteration(err: BraceError, iteration: usize) -> BraceError {
    match err {
        BraceError::Numerical { message, context } => BraceError::Numerical {
            message: format!("iteration {iteration}: {message}"),
            context,
        },
        other => other,
    }
}
