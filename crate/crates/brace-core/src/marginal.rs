//! Collapsed marginal likelihood of the response with the cluster values
//! integrated out under the zero-sum constraint.
//!
//! With labels `z` fixed, the aggregated design `X_z` sums the columns of `X`
//! within each nonzero cluster. Integrating the cluster values over the
//! hyperplane `f . theta = 0` (where `f` holds the cluster sizes) gives a
//! closed form:
//!
//! ```text
//! log f(y | sigma2, gamma2, z, X)
//!   = -(n/2) log(2 pi sigma2) + ((K-1)/2) log(sigma2/gamma2)
//!     - (1/2) log det(A*) + (1/2) log(sum_k f_k^2) - log f_K
//!     - (y'y - btilde' A*^-1 btilde) / (2 sigma2)
//! ```
//!
//! where `A = X_z'X_z + (sigma2/gamma2) I` is reduced to `A*` by eliminating
//! the last coordinate through the constraint, and `btilde` is the matching
//! reduction of `b = X_z'y`. States with no nonzero cluster, or a single one
//! (which the constraint pins to zero), score as the null model.
//!
//! Label sweeps evaluate this marginal for every candidate reassignment of
//! every feature, so [`SweepEngine`] maintains the K x K aggregate
//! `X_z'X_z = Z'GZ` and the K-vector `X_z'y` incrementally from a
//! precomputed Gram matrix `G = X'X`, updating them in O(K + p) per label
//! change. When `G` is too large to materialize, a fallback recomputes
//! column sums on the fly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{BraceError, Result};
use crate::preprocessing::Dataset;

/// Label value marking the feature currently detached during a sweep.
const DETACHED: usize = usize::MAX;

/// Largest `p` for which the p x p Gram matrix is materialized by default.
pub const GRAM_CACHE_MAX_P: usize = 4000;

/// Whether label sweeps use the cached Gram aggregates or recompute column
/// sums per evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GramPolicy {
    /// Cache when `p <= GRAM_CACHE_MAX_P`, otherwise fall back.
    #[default]
    Auto,
    Cached,
    OnTheFly,
}

impl GramPolicy {
    pub fn cached_for(self, p: usize) -> bool {
        match self {
            GramPolicy::Auto => p <= GRAM_CACHE_MAX_P,
            GramPolicy::Cached => true,
            GramPolicy::OnTheFly => false,
        }
    }
}

/// Sizes of the nonzero clusters plus the spike count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterFrequencies {
    /// Size of each nonzero cluster, every entry >= 1.
    pub f: Vec<usize>,
    /// Number of features in the spike (label 0).
    pub p0: usize,
}

impl ClusterFrequencies {
    pub fn k(&self) -> usize {
        self.f.len()
    }

    pub fn p_z(&self) -> usize {
        self.f.iter().sum()
    }
}

/// Counts label occurrences, compacting away unused nonzero labels.
///
/// Nonzero clusters are reported in ascending label order, so
/// `z = (0, 2, 1, 2)` yields `f = (1, 2)` with `p0 = 1`.
pub fn cluster_frequencies(z: &[usize]) -> ClusterFrequencies {
    let max_label = z.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max_label + 1];
    for &label in z {
        counts[label] += 1;
    }
    ClusterFrequencies {
        f: counts[1..].iter().copied().filter(|&c| c > 0).collect(),
        p0: counts[0],
    }
}

/// Log-determinant of `B = I + f* f*' / f_K^2`, which collapses to
/// `log(sum_k f_k^2) - 2 log f_K` by the matrix-determinant lemma.
pub fn log_det_b(freqs: &ClusterFrequencies) -> f64 {
    if freqs.f.is_empty() {
        return 0.0;
    }
    let sum_sq: f64 = freqs.f.iter().map(|&fk| (fk * fk) as f64).sum();
    let f_last = *freqs.f.last().unwrap() as f64;
    sum_sq.ln() - 2.0 * f_last.ln()
}

fn log_null_marginal(n: usize, yty: f64, sigma2: f64) -> f64 {
    let n = n as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - yty / (2.0 * sigma2)
}

/// Core closed form over precomputed aggregates `s = X_z'X_z`, `b = X_z'y`.
///
/// `f` must list the nonzero cluster sizes matching the rows of `s`. States
/// with `K <= 1` score as the null model.
pub fn collapsed_log_marginal(
    s: &DMatrix<f64>,
    b: &DVector<f64>,
    f: &[usize],
    yty: f64,
    n: usize,
    sigma2: f64,
    gamma2: f64,
) -> Result<f64> {
    if sigma2 <= 0.0 || gamma2 <= 0.0 {
        return Err(BraceError::invalid(format!(
            "variances must be positive (sigma2 = {sigma2}, gamma2 = {gamma2})"
        )));
    }
    let k = f.len();
    if k <= 1 {
        return Ok(log_null_marginal(n, yty, sigma2));
    }
    debug_assert_eq!(s.nrows(), k);
    debug_assert_eq!(b.len(), k);

    let ridge = sigma2 / gamma2;
    let f_k = f[k - 1] as f64;
    let km1 = k - 1;

    // A* = A11 - (A12 f*' + f* A12') / f_K + a_KK f* f*' / f_K^2
    // with A = s + ridge I; only the reduced (K-1) block is materialized.
    let a_kk = s[(km1, km1)] + ridge;
    let mut a_star = DMatrix::zeros(km1, km1);
    for i in 0..km1 {
        let fi = f[i] as f64;
        let a_i_last = s[(i, km1)];
        for j in 0..=i {
            let fj = f[j] as f64;
            let a_j_last = s[(j, km1)];
            let base = s[(i, j)] + if i == j { ridge } else { 0.0 };
            let val = base - (a_i_last * fj + fi * a_j_last) / f_k + a_kk * fi * fj / (f_k * f_k);
            a_star[(i, j)] = val;
            a_star[(j, i)] = val;
        }
    }
    let b_k = b[km1];
    let b_tilde = DVector::from_fn(km1, |i, _| b[i] - b_k / f_k * f[i] as f64);

    let chol = Cholesky::new(a_star).ok_or_else(|| {
        BraceError::numerical_with_state(
            "reduced quadratic form is not positive-definite",
            serde_json::json!({"f": f, "sigma2": sigma2, "gamma2": gamma2, "n": n}).to_string(),
        )
    })?;
    let log_det_a_star: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let quad = b_tilde.dot(&chol.solve(&b_tilde));

    let sum_f_sq: f64 = f.iter().map(|&fk| (fk * fk) as f64).sum();
    let n_f = n as f64;
    let log_f = -0.5 * n_f * (2.0 * std::f64::consts::PI * sigma2).ln()
        + 0.5 * (km1 as f64) * (sigma2 / gamma2).ln()
        - 0.5 * log_det_a_star
        + 0.5 * sum_f_sq.ln()
        - f_k.ln()
        - (yty - quad) / (2.0 * sigma2);
    if !log_f.is_finite() {
        return Err(BraceError::numerical_with_state(
            "collapsed marginal is not finite",
            serde_json::json!({
                "f": f, "sigma2": sigma2, "gamma2": gamma2, "yty": yty, "quad": quad
            })
            .to_string(),
        ));
    }
    Ok(log_f)
}

/// Evaluates the collapsed marginal directly from `(y, X, z)`.
///
/// Labels use 0 for the spike; nonzero labels need not be contiguous.
pub fn log_marginal_y(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &[usize],
    sigma2: f64,
    gamma2: f64,
) -> Result<f64> {
    if z.len() != x.ncols() {
        return Err(BraceError::invalid(format!(
            "{} labels for {} features",
            z.len(),
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(BraceError::invalid(format!(
            "response has {} entries but design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    let freqs = cluster_frequencies(z);
    let k = freqs.k();
    let yty = y.dot(y);
    if k <= 1 {
        return Ok(log_null_marginal(y.len(), yty, sigma2));
    }
    // Map original labels onto compacted indices 0..K.
    let max_label = z.iter().copied().max().unwrap();
    let mut slot = vec![usize::MAX; max_label + 1];
    let mut next = 0usize;
    for label in 1..=max_label {
        if z.contains(&label) {
            slot[label] = next;
            next += 1;
        }
    }
    let n = x.nrows();
    let mut xz = DMatrix::zeros(n, k);
    for (j, &label) in z.iter().enumerate() {
        if label != 0 {
            let col = slot[label];
            for i in 0..n {
                xz[(i, col)] += x[(i, j)];
            }
        }
    }
    let s = xz.transpose() * &xz;
    let b = xz.transpose() * y;
    collapsed_log_marginal(&s, &b, &freqs.f, yty, n, sigma2, gamma2)
}

/// Candidate destination for one feature during a label sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    Spike,
    /// Existing nonzero cluster, 0-based index into the frequency vector.
    Existing(usize),
    Fresh,
}

enum Backing {
    /// p x p Gram matrix; aggregates maintained incrementally.
    Gram(DMatrix<f64>),
    /// Raw design kept; column sums rebuilt from scratch per evaluation.
    ColumnSums(DMatrix<f64>),
}

/// Per-feature scoring context produced by [`SweepEngine::scratch`].
pub struct FeatureScratch {
    j: usize,
    /// Inner products of column j with each cluster's summed column
    /// (cached mode only; the fallback rebuilds everything per candidate).
    cvec: DVector<f64>,
    gjj: f64,
    vj: f64,
}

/// Incremental aggregate state for label sweeps.
///
/// A sweep visits each feature once: `detach`, score every candidate with
/// `log_marginal_candidate`, then `attach` the sampled choice. The committed
/// aggregates also back the cluster-value and variance updates.
pub struct SweepEngine {
    backing: Backing,
    v: DVector<f64>,
    yty: f64,
    n: usize,
    p: usize,
    z: Vec<usize>,
    f: Vec<usize>,
    p0: usize,
    s: DMatrix<f64>,
    b: DVector<f64>,
}

impl SweepEngine {
    pub fn new(data: &Dataset, z: &[usize], policy: GramPolicy) -> Result<Self> {
        let p = data.p();
        if z.len() != p {
            return Err(BraceError::invalid(format!(
                "{} labels for {} features",
                z.len(),
                p
            )));
        }
        let freqs = cluster_frequencies(z);
        let k = freqs.k();
        let max_label = z.iter().copied().max().unwrap_or(0);
        if max_label > k {
            return Err(BraceError::invalid(
                "labels must be contiguous 0..=K for sweep bookkeeping",
            ));
        }
        let v = data.x.transpose() * &data.y;
        let yty = data.y.dot(&data.y);
        let backing = if policy.cached_for(p) {
            Backing::Gram(data.x.transpose() * &data.x)
        } else {
            Backing::ColumnSums(data.x.clone())
        };
        let mut engine = Self {
            backing,
            v,
            yty,
            n: data.n(),
            p,
            z: z.to_vec(),
            f: freqs.f,
            p0: freqs.p0,
            s: DMatrix::zeros(k, k),
            b: DVector::zeros(k),
        };
        engine.rebuild_aggregates();
        Ok(engine)
    }

    pub fn labels(&self) -> &[usize] {
        &self.z
    }

    pub fn frequencies(&self) -> ClusterFrequencies {
        ClusterFrequencies {
            f: self.f.clone(),
            p0: self.p0,
        }
    }

    pub fn k(&self) -> usize {
        self.f.len()
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.f
    }

    pub fn spike_count(&self) -> usize {
        self.p0
    }

    pub fn nonzero_count(&self) -> usize {
        self.f.iter().sum()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn is_cached(&self) -> bool {
        matches!(self.backing, Backing::Gram(_))
    }

    /// Committed `(X_z'X_z, X_z'y)` for the current labels.
    pub fn aggregates(&self) -> (DMatrix<f64>, DVector<f64>) {
        match &self.backing {
            Backing::Gram(_) => (self.s.clone(), self.b.clone()),
            Backing::ColumnSums(x) => {
                let xz = self.column_sums(x);
                (xz.transpose() * &xz, xz.transpose_mul_v(&self.v, &self.z, self.k()))
            }
        }
    }

    fn column_sums(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.k();
        let mut xz = DMatrix::zeros(self.n, k);
        for (j, &label) in self.z.iter().enumerate() {
            if label != 0 && label != DETACHED {
                let col = label - 1;
                for i in 0..self.n {
                    xz[(i, col)] += x[(i, j)];
                }
            }
        }
        xz
    }

    fn rebuild_aggregates(&mut self) {
        let k = self.k();
        match &self.backing {
            Backing::Gram(g) => {
                let mut s = DMatrix::zeros(k, k);
                let mut b = DVector::zeros(k);
                for (j, &lj) in self.z.iter().enumerate() {
                    if lj == 0 || lj == DETACHED {
                        continue;
                    }
                    b[lj - 1] += self.v[j];
                    for (i, &li) in self.z.iter().enumerate() {
                        if li != 0 && li != DETACHED {
                            s[(lj - 1, li - 1)] += g[(i, j)];
                        }
                    }
                }
                self.s = s;
                self.b = b;
            }
            Backing::ColumnSums(_) => {
                self.s = DMatrix::zeros(k, k);
                self.b = DVector::zeros(k);
            }
        }
    }

    /// Removes feature `j` from its cluster, compacting an emptied cluster
    /// immediately. Must be balanced by `attach`.
    pub fn detach(&mut self, j: usize) {
        let label = self.z[j];
        debug_assert_ne!(label, DETACHED, "feature {j} already detached");
        self.z[j] = DETACHED;
        if label == 0 {
            self.p0 -= 1;
            return;
        }
        let a = label - 1;
        self.f[a] -= 1;
        if self.f[a] == 0 {
            self.remove_cluster(a);
            return;
        }
        if let Backing::Gram(g) = &self.backing {
            let k = self.k();
            let mut cvec = DVector::<f64>::zeros(k);
            for (i, &li) in self.z.iter().enumerate() {
                if li != 0 && li != DETACHED {
                    cvec[li - 1] += g[(i, j)];
                }
            }
            let gjj = g[(j, j)];
            for t in 0..k {
                if t == a {
                    self.s[(a, a)] -= 2.0 * cvec[a] + gjj;
                } else {
                    self.s[(a, t)] -= cvec[t];
                    self.s[(t, a)] -= cvec[t];
                }
            }
            self.b[a] -= self.v[j];
        }
    }

    fn remove_cluster(&mut self, a: usize) {
        let k = self.k();
        debug_assert_eq!(self.f[a], 0);
        // Shift labels above `a` down by one so clusters stay 1..=K.
        for zi in self.z.iter_mut() {
            if *zi != DETACHED && *zi > a + 1 {
                *zi -= 1;
            }
        }
        self.f.remove(a);
        if matches!(self.backing, Backing::Gram(_)) {
            let keep: Vec<usize> = (0..k).filter(|&t| t != a).collect();
            self.s = DMatrix::from_fn(k - 1, k - 1, |r, c| self.s[(keep[r], keep[c])]);
            self.b = DVector::from_fn(k - 1, |r, _| self.b[keep[r]]);
        }
    }

    /// Scoring context for the detached feature `j`.
    pub fn scratch(&self, j: usize) -> FeatureScratch {
        debug_assert_eq!(self.z[j], DETACHED);
        let k = self.k();
        match &self.backing {
            Backing::Gram(g) => {
                let mut cvec = DVector::<f64>::zeros(k);
                for (i, &li) in self.z.iter().enumerate() {
                    if li != 0 && li != DETACHED {
                        cvec[li - 1] += g[(i, j)];
                    }
                }
                FeatureScratch {
                    j,
                    cvec,
                    gjj: g[(j, j)],
                    vj: self.v[j],
                }
            }
            Backing::ColumnSums(_) => FeatureScratch {
                j,
                cvec: DVector::zeros(0),
                gjj: 0.0,
                vj: self.v[j],
            },
        }
    }

    /// Collapsed marginal for placing the detached feature at `candidate`.
    pub fn log_marginal_candidate(
        &self,
        scratch: &FeatureScratch,
        candidate: Candidate,
        sigma2: f64,
        gamma2: f64,
    ) -> Result<f64> {
        if let Backing::ColumnSums(x) = &self.backing {
            return self.rebuild_candidate_marginal(x, scratch.j, candidate, sigma2, gamma2);
        }
        let k = self.k();
        match candidate {
            Candidate::Spike => {
                collapsed_log_marginal(&self.s, &self.b, &self.f, self.yty, self.n, sigma2, gamma2)
            }
            Candidate::Existing(t) => {
                debug_assert!(t < k);
                let mut s = self.s.clone();
                for r in 0..k {
                    if r == t {
                        s[(t, t)] += 2.0 * scratch.cvec[t] + scratch.gjj;
                    } else {
                        s[(t, r)] += scratch.cvec[r];
                        s[(r, t)] += scratch.cvec[r];
                    }
                }
                let mut b = self.b.clone();
                b[t] += scratch.vj;
                let mut f = self.f.clone();
                f[t] += 1;
                collapsed_log_marginal(&s, &b, &f, self.yty, self.n, sigma2, gamma2)
            }
            Candidate::Fresh => {
                let mut s = DMatrix::zeros(k + 1, k + 1);
                s.view_mut((0, 0), (k, k)).copy_from(&self.s);
                for r in 0..k {
                    s[(k, r)] = scratch.cvec[r];
                    s[(r, k)] = scratch.cvec[r];
                }
                s[(k, k)] = scratch.gjj;
                let mut b = DVector::zeros(k + 1);
                b.view_mut((0, 0), (k, 1)).copy_from(&self.b);
                b[k] = scratch.vj;
                let mut f = self.f.clone();
                f.push(1);
                collapsed_log_marginal(&s, &b, &f, self.yty, self.n, sigma2, gamma2)
            }
        }
    }

    /// Fallback route: the candidate's aggregated design is rebuilt from the
    /// raw matrix on every evaluation; nothing is carried between calls.
    fn rebuild_candidate_marginal(
        &self,
        x: &DMatrix<f64>,
        j: usize,
        candidate: Candidate,
        sigma2: f64,
        gamma2: f64,
    ) -> Result<f64> {
        let k = self.k();
        let (label, k_cand) = match candidate {
            Candidate::Spike => (0, k),
            Candidate::Existing(t) => (t + 1, k),
            Candidate::Fresh => (k + 1, k + 1),
        };
        let mut f = self.f.clone();
        match candidate {
            Candidate::Spike => {}
            Candidate::Existing(t) => f[t] += 1,
            Candidate::Fresh => f.push(1),
        }
        let mut xz = DMatrix::<f64>::zeros(self.n, k_cand);
        let mut b = DVector::<f64>::zeros(k_cand);
        {
            let mut add = |col: usize, feature: usize| {
                for i in 0..self.n {
                    xz[(i, col)] += x[(i, feature)];
                }
                b[col] += self.v[feature];
            };
            for (i, &li) in self.z.iter().enumerate() {
                if li != 0 && li != DETACHED {
                    add(li - 1, i);
                }
            }
            if label != 0 {
                add(label - 1, j);
            }
        }
        let s = xz.transpose() * &xz;
        collapsed_log_marginal(&s, &b, &f, self.yty, self.n, sigma2, gamma2)
    }

    /// Commits the detached feature to `candidate`.
    pub fn attach(&mut self, scratch: FeatureScratch, candidate: Candidate) {
        let j = scratch.j;
        debug_assert_eq!(self.z[j], DETACHED);
        let k = self.k();
        match candidate {
            Candidate::Spike => {
                self.z[j] = 0;
                self.p0 += 1;
            }
            Candidate::Existing(t) => {
                self.z[j] = t + 1;
                self.f[t] += 1;
                if matches!(self.backing, Backing::Gram(_)) {
                    for r in 0..k {
                        if r == t {
                            self.s[(t, t)] += 2.0 * scratch.cvec[t] + scratch.gjj;
                        } else {
                            self.s[(t, r)] += scratch.cvec[r];
                            self.s[(r, t)] += scratch.cvec[r];
                        }
                    }
                    self.b[t] += scratch.vj;
                }
            }
            Candidate::Fresh => {
                self.z[j] = k + 1;
                self.f.push(1);
                if matches!(self.backing, Backing::Gram(_)) {
                    let mut s = DMatrix::zeros(k + 1, k + 1);
                    s.view_mut((0, 0), (k, k)).copy_from(&self.s);
                    for r in 0..k {
                        s[(k, r)] = scratch.cvec[r];
                        s[(r, k)] = scratch.cvec[r];
                    }
                    s[(k, k)] = scratch.gjj;
                    self.s = s;
                    let mut b = DVector::zeros(k + 1);
                    b.view_mut((0, 0), (k, 1)).copy_from(&self.b);
                    b[k] = scratch.vj;
                    self.b = b;
                }
            }
        }
        debug_assert_eq!(
            self.nonzero_count() + self.p0 + self.detached_count(),
            self.p
        );
    }

    fn detached_count(&self) -> usize {
        self.z.iter().filter(|&&l| l == DETACHED).count()
    }

    /// Marginal for the committed labels at the given variances.
    pub fn log_marginal_current(&self, sigma2: f64, gamma2: f64) -> Result<f64> {
        let (s, b) = self.aggregates();
        collapsed_log_marginal(&s, &b, &self.f, self.yty, self.n, sigma2, gamma2)
    }
}

trait TransposeMulV {
    fn transpose_mul_v(&self, v: &DVector<f64>, z: &[usize], k: usize) -> DVector<f64>;
}

impl TransposeMulV for DMatrix<f64> {
    /// `X_z'y` accumulated from the precomputed `X'y` by label.
    fn transpose_mul_v(&self, v: &DVector<f64>, z: &[usize], k: usize) -> DVector<f64> {
        let mut b = DVector::zeros(k);
        for (j, &label) in z.iter().enumerate() {
            if label != 0 && label != DETACHED {
                b[label - 1] += v[j];
            }
        }
        b
    }
}
