//! Scoring of fits against held-out data and simulation truth: prediction
//! error, coefficient L2 loss, selection errors, and the adjusted Rand
//! index.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{BraceError, Result};

/// One replicate's scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pe: f64,
    pub l2: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ari: f64,
}

/// Mean squared prediction residual on held-out data.
pub fn prediction_error(
    y_test: &DVector<f64>,
    x_test: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
) -> Result<f64> {
    if x_test.nrows() != y_test.len() || x_test.ncols() != beta_hat.len() {
        return Err(BraceError::invalid(format!(
            "dimension mismatch: X is {}x{}, y has {}, beta has {}",
            x_test.nrows(),
            x_test.ncols(),
            y_test.len(),
            beta_hat.len()
        )));
    }
    let resid = y_test - x_test * beta_hat;
    Ok(resid.dot(&resid) / y_test.len() as f64)
}

/// Euclidean distance between coefficient vectors.
pub fn l2_loss(beta_true: &DVector<f64>, beta_hat: &DVector<f64>) -> Result<f64> {
    if beta_true.len() != beta_hat.len() {
        return Err(BraceError::invalid(format!(
            "coefficient lengths differ: {} vs {}",
            beta_true.len(),
            beta_hat.len()
        )));
    }
    Ok((beta_true - beta_hat).norm())
}

/// False positives (selected nulls) and false negatives (missed signals).
pub fn selection_errors(selected: &[bool], beta_true: &[f64]) -> Result<(usize, usize)> {
    if selected.len() != beta_true.len() {
        return Err(BraceError::invalid(format!(
            "selection length {} does not match truth length {}",
            selected.len(),
            beta_true.len()
        )));
    }
    let fp = selected
        .iter()
        .zip(beta_true)
        .filter(|(&s, &b)| s && b == 0.0)
        .count();
    let fn_ = selected
        .iter()
        .zip(beta_true)
        .filter(|(&s, &b)| !s && b != 0.0)
        .count();
    Ok((fp, fn_))
}

/// Chance-corrected agreement between two partitions from their contingency
/// table.
///
/// Accumulation is exact in integers with a single final division, so the
/// value agrees bitwise with any pair-counting formulation of the same
/// quantity. Identical trivial partitions (the 0/0 case) return 1 by
/// convention.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(BraceError::invalid(format!(
            "label lengths differ: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(BraceError::invalid("need at least 2 items to compare"));
    }
    let mut joint: HashMap<(usize, usize), i128> = HashMap::new();
    let mut rows: HashMap<usize, i128> = HashMap::new();
    let mut cols: HashMap<usize, i128> = HashMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b.iter()) {
        *joint.entry((a, b)).or_insert(0) += 1;
        *rows.entry(a).or_insert(0) += 1;
        *cols.entry(b).or_insert(0) += 1;
    }
    let choose2 = |c: i128| c * (c - 1) / 2;
    let sum_joint: i128 = joint.values().map(|&c| choose2(c)).sum();
    let sum_rows: i128 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: i128 = cols.values().map(|&c| choose2(c)).sum();
    let pairs = choose2(n as i128);

    // ARI = (sum_joint - sum_rows sum_cols / pairs)
    //       / ((sum_rows + sum_cols)/2 - sum_rows sum_cols / pairs),
    // cleared of denominators so both sides are exact integers.
    let numer = 2 * (pairs * sum_joint - sum_rows * sum_cols);
    let denom = pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols;
    if denom == 0 {
        // Both partitions are trivial (all-singletons or one block); they
        // can only be identical here.
        return Ok(1.0);
    }
    Ok(numer as f64 / denom as f64)
}
