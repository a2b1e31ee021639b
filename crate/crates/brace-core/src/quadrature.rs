//! Brute-force reference evaluation of the collapsed marginal by numerical
//! integration over the constraint hyperplane.
//!
//! This is a verification oracle for [`crate::marginal`]: it never touches
//! the closed-form reduction. The integrand is parameterized by the first
//! K-1 cluster values (the last is pinned by the zero-sum constraint), the
//! quadratic's mode and curvature are located by finite differences, and
//! both the data integral and the truncated-prior normalizer are computed
//! with Simpson's rule on a mode-centered box. Supports K in {1, 2, 3};
//! intended for desk-scale checks only.

use nalgebra::{DMatrix, DVector};

use crate::marginal::cluster_frequencies;

/// Log of the collapsed marginal, evaluated by quadrature.
///
/// Panics if the labels induce more than three nonzero clusters; this is a
/// test oracle, not a production path.
pub fn log_marginal_quadrature(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &[usize],
    sigma2: f64,
    gamma2: f64,
) -> f64 {
    let freqs = cluster_frequencies(z);
    let k = freqs.k();
    let n = y.len();
    let yty = y.dot(y);
    if k <= 1 {
        return -0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln()
            - yty / (2.0 * sigma2);
    }
    assert!(k <= 3, "quadrature oracle supports at most 3 clusters, got {k}");

    // Aggregated design, built directly from the labels.
    let max_label = z.iter().copied().max().unwrap();
    let mut slot = vec![usize::MAX; max_label + 1];
    let mut next = 0usize;
    for label in 1..=max_label {
        if z.contains(&label) {
            slot[label] = next;
            next += 1;
        }
    }
    let mut xz = DMatrix::zeros(n, k);
    for (j, &label) in z.iter().enumerate() {
        if label != 0 {
            for i in 0..n {
                xz[(i, slot[label])] += x[(i, j)];
            }
        }
    }
    let f: Vec<f64> = freqs.f.iter().map(|&u| u as f64).collect();
    let d = k - 1;

    let theta_full = |t: &[f64]| -> DVector<f64> {
        let mut theta = DVector::zeros(k);
        let mut partial = 0.0;
        for i in 0..d {
            theta[i] = t[i];
            partial += f[i] * t[i];
        }
        theta[k - 1] = -partial / f[k - 1];
        theta
    };

    // Raw integrand logs, as functions of the reduced coordinates.
    let log_joint = |t: &[f64]| -> f64 {
        let theta = theta_full(t);
        let resid = y - &xz * &theta;
        -resid.dot(&resid) / (2.0 * sigma2) - theta.dot(&theta) / (2.0 * gamma2)
    };
    let log_prior = |t: &[f64]| -> f64 {
        let theta = theta_full(t);
        -theta.dot(&theta) / (2.0 * gamma2)
    };

    let log_i_joint = log_integral(&log_joint, d);
    let log_i_prior = log_integral(&log_prior, d);

    -0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + log_i_joint - log_i_prior
}

/// log of `integral exp(g(t)) dt` over R^d for a concave quadratic `g`,
/// via mode-centered Simpson quadrature. d must be 1 or 2.
fn log_integral(g: &dyn Fn(&[f64]) -> f64, d: usize) -> f64 {
    let (mode, hess) = quadratic_mode(g, d);
    // Covariance of the matching Gaussian is -H^-1; bound the box by the
    // largest marginal standard deviation.
    let cov = -invert_small(&hess, d);
    let max_var = (0..d).map(|i| cov[(i, i)]).fold(0.0_f64, f64::max);
    let cross = if d == 2 { cov[(0, 1)].abs() } else { 0.0 };
    let sd = (max_var + cross).max(1e-12).sqrt();
    let half_width = 12.0 * sd;

    let g_mode = g(&mode);
    let m = if d == 1 { 4000 } else { 500 };
    let h = 2.0 * half_width / m as f64;
    let weight = |idx: usize| -> f64 {
        if idx == 0 || idx == m {
            1.0
        } else if idx % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };

    let mut sum = 0.0_f64;
    match d {
        1 => {
            for i in 0..=m {
                let t = [mode[0] - half_width + i as f64 * h];
                sum += weight(i) * (g(&t) - g_mode).exp();
            }
            sum *= h / 3.0;
        }
        2 => {
            for i in 0..=m {
                let ti = mode[0] - half_width + i as f64 * h;
                let wi = weight(i);
                let mut row = 0.0;
                for j in 0..=m {
                    let tj = mode[1] - half_width + j as f64 * h;
                    row += weight(j) * (g(&[ti, tj]) - g_mode).exp();
                }
                sum += wi * row;
            }
            sum *= (h / 3.0) * (h / 3.0);
        }
        _ => unreachable!(),
    }
    g_mode + sum.ln()
}

/// Mode and Hessian of a concave quadratic by finite differences (exact for
/// quadratics up to round-off) plus two Newton steps.
fn quadratic_mode(g: &dyn Fn(&[f64]) -> f64, d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let h = 1e-3;
    let mut t = vec![0.0_f64; d];
    let mut hess = DMatrix::zeros(d, d);
    for _ in 0..2 {
        let mut grad = DVector::zeros(d);
        for i in 0..d {
            let mut tp = t.clone();
            let mut tm = t.clone();
            tp[i] += h;
            tm[i] -= h;
            grad[i] = (g(&tp) - g(&tm)) / (2.0 * h);
        }
        for i in 0..d {
            for j in 0..d {
                let mut tpp = t.clone();
                let mut tpm = t.clone();
                let mut tmp = t.clone();
                let mut tmm = t.clone();
                tpp[i] += h;
                tpp[j] += h;
                tpm[i] += h;
                tpm[j] -= h;
                tmp[i] -= h;
                tmp[j] += h;
                tmm[i] -= h;
                tmm[j] -= h;
                hess[(i, j)] = (g(&tpp) - g(&tpm) - g(&tmp) + g(&tmm)) / (4.0 * h * h);
            }
        }
        let step = invert_small(&hess, d) * grad;
        for i in 0..d {
            t[i] -= step[i];
        }
    }
    (t, hess)
}

fn invert_small(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    match d {
        1 => DMatrix::from_element(1, 1, 1.0 / m[(0, 0)]),
        2 => {
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    m[(1, 1)] / det,
                    -m[(0, 1)] / det,
                    -m[(1, 0)] / det,
                    m[(0, 0)] / det,
                ],
            )
        }
        _ => unreachable!(),
    }
}
