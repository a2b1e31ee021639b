//! Count-table preprocessing: zero replacement, total-sum scaling, log
//! transform, and centering.
//!
//! Raw abundance counts carry only relative information, so each sample row
//! is scaled to sum to one before the log transform. Exact zeros are replaced
//! by a pseudocount first. Centering removes the intercept; the removed
//! column means and response mean are kept on the [`Dataset`] so held-out
//! data can be centered with the training means.

use nalgebra::{DMatrix, DVector};

use crate::error::{BraceError, Result};

/// Raw nonnegative count table, one row per sample.
#[derive(Debug, Clone)]
pub struct CountMatrix {
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl CountMatrix {
    /// Validates nonnegativity and dimension consistency.
    pub fn new(
        values: DMatrix<f64>,
        feature_names: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if values.ncols() != feature_names.len() {
            return Err(BraceError::invalid(format!(
                "count matrix has {} columns but {} feature names",
                values.ncols(),
                feature_names.len()
            )));
        }
        if values.nrows() != sample_ids.len() {
            return Err(BraceError::invalid(format!(
                "count matrix has {} rows but {} sample ids",
                values.nrows(),
                sample_ids.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(BraceError::invalid(format!(
                "counts must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self {
            values,
            feature_names,
            sample_ids,
        })
    }

    /// Drops features whose total abundance across samples is below
    /// `min_total`. Returns the surviving matrix and the names removed.
    pub fn filter_features(&self, min_total: f64) -> (CountMatrix, Vec<String>) {
        let keep: Vec<usize> = (0..self.values.ncols())
            .filter(|&j| self.values.column(j).sum() >= min_total)
            .collect();
        let dropped = (0..self.values.ncols())
            .filter(|j| !keep.contains(j))
            .map(|j| self.feature_names[j].clone())
            .collect();
        let values = DMatrix::from_fn(self.values.nrows(), keep.len(), |i, j| {
            self.values[(i, keep[j])]
        });
        let feature_names = keep.iter().map(|&j| self.feature_names[j].clone()).collect();
        (
            CountMatrix {
                values,
                feature_names,
                sample_ids: self.sample_ids.clone(),
            },
            dropped,
        )
    }
}

/// Centered design matrix and response ready for the sampler.
///
/// Every column of `x` and the vector `y` have zero mean; the removed means
/// are retained for prediction-time reuse on held-out data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub x_means: DVector<f64>,
    pub y_mean: f64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Replaces exact zeros with `pseudocount`, divides each row by its sum, and
/// takes the elementwise log.
///
/// Fails on negative counts, and on a zero row sum (which can only happen
/// when an all-zero row meets `pseudocount == 0`). Features with zero total
/// abundance are rejected rather than silently dropped; filter them out
/// explicitly with [`CountMatrix::filter_features`] first.
pub fn to_log_relative_abundance(counts: &CountMatrix, pseudocount: f64) -> Result<DMatrix<f64>> {
    if pseudocount < 0.0 || !pseudocount.is_finite() {
        return Err(BraceError::invalid(format!(
            "pseudocount must be nonnegative and finite, got {pseudocount}"
        )));
    }
    for j in 0..counts.values.ncols() {
        if counts.values.column(j).sum() == 0.0 {
            return Err(BraceError::invalid(format!(
                "feature '{}' has zero total abundance; filter it before transforming",
                counts.feature_names[j]
            )));
        }
    }
    let (n, p) = counts.values.shape();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..p {
            let v = counts.values[(i, j)];
            let v = if v == 0.0 { pseudocount } else { v };
            out[(i, j)] = v;
            row_sum += v;
        }
        if row_sum == 0.0 {
            return Err(BraceError::numerical(format!(
                "sample '{}' has zero row sum after pseudocount replacement",
                counts.sample_ids[i]
            )));
        }
        for j in 0..p {
            out[(i, j)] = (out[(i, j)] / row_sum).ln();
        }
    }
    Ok(out)
}

/// Centers each column of `x` and the response `y`, retaining the means.
pub fn center(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    feature_names: Vec<String>,
) -> Result<Dataset> {
    let n = x.nrows();
    if n < 2 {
        return Err(BraceError::invalid(format!(
            "centering needs at least 2 samples, got {n}"
        )));
    }
    if y.len() != n {
        return Err(BraceError::invalid(format!(
            "design has {n} rows but response has {} entries",
            y.len()
        )));
    }
    let x_means = DVector::from_fn(x.ncols(), |j, _| x.column(j).mean());
    let y_mean = y.mean();
    Ok(Dataset {
        x: center_matrix(x, &x_means),
        y: y.map(|v| v - y_mean),
        feature_names,
        x_means,
        y_mean,
    })
}

/// Applies previously computed (training) means to new data. Columns of the
/// result need not have exactly zero mean.
pub fn center_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    feature_names: Vec<String>,
    x_means: &DVector<f64>,
    y_mean: f64,
) -> Result<Dataset> {
    if x.ncols() != x_means.len() {
        return Err(BraceError::invalid(format!(
            "design has {} columns but {} means were supplied",
            x.ncols(),
            x_means.len()
        )));
    }
    Ok(Dataset {
        x: center_matrix(x, x_means),
        y: y.map(|v| v - y_mean),
        feature_names,
        x_means: x_means.clone(),
        y_mean,
    })
}

fn center_matrix(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for j in 0..out.ncols() {
        let m = means[j];
        for i in 0..out.nrows() {
            out[(i, j)] -= m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn counts(rows: &[&[f64]]) -> CountMatrix {
        let n = rows.len();
        let p = rows[0].len();
        let values = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        CountMatrix::new(
            values,
            (0..p).map(|j| format!("f{j}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pseudocount_replaces_zeros_before_scaling() {
        // Second row keeps every feature's total positive.
        let c = counts(&[&[0.0, 1.0, 3.0], &[1.0, 1.0, 1.0]]);
        let x = to_log_relative_abundance(&c, 0.5).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], (0.5_f64 / 4.5).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(x[(0, 1)], (1.0_f64 / 4.5).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(x[(0, 2)], (3.0_f64 / 4.5).ln(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_row_maps_to_uniform_log() {
        let c = counts(&[&[1.0, 1.0, 1.0, 1.0]]);
        let x = to_log_relative_abundance(&c, 0.5).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(x[(0, j)], 0.25_f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pseudocount_untouched_when_no_zeros() {
        let c = counts(&[&[2.0, 2.0]]);
        let x = to_log_relative_abundance(&c, 0.5).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 0.5_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(x[(0, 1)], 0.5_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn negative_count_rejected() {
        let values = DMatrix::from_fn(1, 2, |_, j| if j == 0 { -1.0 } else { 2.0 });
        let err = CountMatrix::new(values, vec!["a".into(), "b".into()], vec!["s".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn zero_row_with_zero_pseudocount_is_numerical_error() {
        // Feature totals stay positive, but one sample row is all zeros and
        // the pseudocount is zero, so its row sum vanishes.
        let c = counts(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let err = to_log_relative_abundance(&c, 0.0).unwrap_err();
        assert!(matches!(err, BraceError::Numerical { .. }));
    }

    #[test]
    fn zero_total_feature_rejected() {
        let c = counts(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let err = to_log_relative_abundance(&c, 0.5).unwrap_err();
        assert!(matches!(err, BraceError::InvalidInput(_)));
    }

    #[test]
    fn filter_features_drops_low_abundance() {
        let c = counts(&[&[1.0, 0.0, 10.0], &[2.0, 0.0, 10.0]]);
        let (kept, dropped) = c.filter_features(1.0);
        assert_eq!(kept.feature_names, vec!["f0", "f2"]);
        assert_eq!(dropped, vec!["f1"]);
    }

    #[test]
    fn center_examples() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 3.0, 2.0]);
        let d = center(&x, &y, vec!["f0".into()]).unwrap();
        assert_abs_diff_eq!(d.x[(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.x[(1, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.x[(2, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.y.sum(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.x_means[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn center_two_point_response() {
        let x = DMatrix::from_column_slice(2, 1, &[5.0, 5.0]);
        let y = DVector::from_column_slice(&[1.0, 3.0]);
        let d = center(&x, &y, vec!["f0".into()]).unwrap();
        assert_abs_diff_eq!(d.y[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.y[1], 1.0, epsilon = 1e-12);
        // Constant column becomes all zeros.
        assert_abs_diff_eq!(d.x[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.x[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn center_requires_two_samples() {
        let x = DMatrix::from_column_slice(1, 1, &[1.0]);
        let y = DVector::from_column_slice(&[1.0]);
        assert!(center(&x, &y, vec!["f0".into()]).is_err());
    }

    #[test]
    fn centering_is_idempotent() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 6.0, -1.0, 4.0, 0.3]);
        let y = DVector::from_column_slice(&[0.5, -2.0, 7.0]);
        let once = center(&x, &y, vec!["a".into(), "b".into()]).unwrap();
        let twice = center(&once.x, &once.y, vec!["a".into(), "b".into()]).unwrap();
        assert_abs_diff_eq!((&once.x - &twice.x).abs().max(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((&once.y - &twice.y).abs().max(), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn relative_abundance_rows_sum_to_one(
            rows in proptest::collection::vec(
                proptest::collection::vec(0.0_f64..100.0, 4), 1..6)
        ) {
            let n = rows.len();
            let values = DMatrix::from_fn(n, 4, |i, j| rows[i][j].round());
            let c = CountMatrix::new(
                values,
                (0..4).map(|j| format!("f{j}")).collect(),
                (0..n).map(|i| format!("s{i}")).collect(),
            ).unwrap();
            // Skip draws that produce a zero-total feature; those are rejected.
            if (0..4).all(|j| c.values.column(j).sum() > 0.0) {
                let x = to_log_relative_abundance(&c, 0.5).unwrap();
                for i in 0..n {
                    let s: f64 = (0..4).map(|j| x[(i, j)].exp()).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn row_rescaling_invariance(
            row in proptest::collection::vec(1.0_f64..50.0, 5),
            scale in 0.01_f64..100.0,
        ) {
            let base = counts(&[&row]);
            let scaled_row: Vec<f64> = row.iter().map(|v| v * scale).collect();
            let scaled = counts(&[&scaled_row]);
            let a = to_log_relative_abundance(&base, 0.5).unwrap();
            let b = to_log_relative_abundance(&scaled, 0.5).unwrap();
            for j in 0..5 {
                prop_assert!((a[(0, j)] - b[(0, j)]).abs() < 1e-10);
            }
        }
    }
}
