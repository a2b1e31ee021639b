//! Point estimates from a chain trace: posterior-mean coefficients,
//! credible-interval variable selection, and a single partition minimizing
//! posterior expected loss.
//!
//! The partition search is a greedy stand-in for a full stochastic search:
//! sequential allocation in a random order followed by single-item
//! reassignment passes, restarted several times. Every sampled partition is
//! also evaluated, so the returned partition never scores worse than any
//! partition visited by the chain.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BraceError, Result};
use crate::gibbs::ChainTrace;

/// Loss minimized when extracting the point partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionLoss {
    /// Pairwise co-clustering disagreement with unit costs.
    #[default]
    Binder,
    /// Variation of information, averaged over the sampled partitions.
    Vi,
}

impl std::str::FromStr for PartitionLoss {
    type Err = BraceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binder" => Ok(PartitionLoss::Binder),
            "vi" => Ok(PartitionLoss::Vi),
            other => Err(BraceError::invalid(format!(
                "unknown partition loss '{other}' (expected binder or vi)"
            ))),
        }
    }
}

/// Per-feature posterior summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub feature_names: Vec<String>,
    pub beta_mean: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub selected: Vec<bool>,
    /// Posterior probability that the feature is outside the spike.
    pub inclusion_prob: Vec<f64>,
    /// Point partition, 0 = spike. Empty until a partition is attached.
    pub point_partition: Vec<usize>,
    pub level: f64,
}

/// Equal-tailed credible intervals and the interval-excludes-zero selection
/// rule. The partition field is left empty.
pub fn credible_interval_select(trace: &ChainTrace, level: f64) -> Result<PosteriorSummary> {
    if trace.is_empty() {
        return Err(BraceError::invalid("trace is empty"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(BraceError::invalid(format!(
            "credible level must be in (0, 1), got {level}"
        )));
    }
    let p = trace.p();
    let t = trace.len();
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;

    let mut beta_mean = vec![0.0; p];
    let mut ci_lower = vec![0.0; p];
    let mut ci_upper = vec![0.0; p];
    let mut selected = vec![false; p];
    let mut inclusion_prob = vec![0.0; p];
    let mut column = vec![0.0_f64; t];
    for j in 0..p {
        for (s, beta) in column.iter_mut().zip(&trace.beta) {
            *s = beta[j];
        }
        beta_mean[j] = column.iter().sum::<f64>() / t as f64;
        column.sort_unstable_by(f64::total_cmp);
        ci_lower[j] = quantile_sorted(&column, lo_q, false);
        ci_upper[j] = quantile_sorted(&column, hi_q, true);
        selected[j] = !(ci_lower[j] <= 0.0 && ci_upper[j] >= 0.0);
        inclusion_prob[j] =
            trace.z.iter().filter(|z| z[j] != 0).count() as f64 / t as f64;
    }
    Ok(PosteriorSummary {
        feature_names: trace.feature_names.clone(),
        beta_mean,
        ci_lower,
        ci_upper,
        selected,
        inclusion_prob,
        point_partition: Vec::new(),
        level,
    })
}

/// Outer empirical quantiles of an ascending slice: the lower endpoint
/// rounds down, the upper rounds up. Intervals are therefore nested in the
/// level, and as the level approaches 1 they reach the sample extremes.
fn quantile_sorted(sorted: &[f64], q: f64, upper: bool) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let idx = if upper {
        pos.ceil() as usize
    } else {
        pos.floor() as usize
    };
    sorted[idx.min(n - 1)]
}

/// Fraction of samples in which each pair of features shares a label; the
/// spike counts as a shared cluster. Symmetric with unit diagonal.
pub fn coclustering_matrix(trace: &ChainTrace) -> Result<DMatrix<f64>> {
    if trace.is_empty() {
        return Err(BraceError::invalid("trace is empty"));
    }
    let p = trace.p();
    let mut counts = DMatrix::<f64>::zeros(p, p);
    for z in &trace.z {
        for i in 0..p {
            for j in (i + 1)..p {
                if z[i] == z[j] {
                    counts[(i, j)] += 1.0;
                }
            }
        }
    }
    let t = trace.len() as f64;
    let mut pi = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let v: f64 = counts[(i, j)] / t;
            pi[(i, j)] = v;
            pi[(j, i)] = v;
        }
    }
    Ok(pi)
}

/// Single partition minimizing the posterior expected loss.
///
/// Greedy sequential allocation with full single-item reassignment passes,
/// best of `restarts` random restarts; every distinct sampled partition is
/// also a candidate, so the result's expected loss never exceeds that of any
/// sampled partition.
pub fn point_partition(
    trace: &ChainTrace,
    loss: PartitionLoss,
    restarts: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if trace.is_empty() {
        return Err(BraceError::invalid("trace is empty"));
    }
    let restarts = restarts.max(1);
    let pi = coclustering_matrix(trace)?;
    let p = trace.p();

    // Distinct sampled partitions, weighted by multiplicity (used both as
    // loss reference for VI and as candidate solutions).
    let mut sampled: HashMap<Vec<usize>, usize> = HashMap::new();
    for z in &trace.z {
        *sampled.entry(canonicalize(z)).or_insert(0) += 1;
    }
    let weighted: Vec<(Vec<usize>, usize)> = sampled.into_iter().collect();

    let evaluate = |partition: &[usize]| -> f64 {
        match loss {
            PartitionLoss::Binder => expected_binder_loss(partition, &pi),
            PartitionLoss::Vi => expected_vi_loss(partition, &weighted, trace.len()),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let consider = |cand: Vec<usize>, score: f64, best: &mut Option<(Vec<usize>, f64)>| {
        if best.as_ref().is_none_or(|(_, s)| score < *s) {
            *best = Some((cand, score));
        }
    };

    for (z, _) in &weighted {
        let score = evaluate(z);
        consider(z.clone(), score, &mut best);
    }

    for _ in 0..restarts {
        let mut order: Vec<usize> = (0..p).collect();
        for i in (1..p).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut partition = greedy_allocation(&order, &pi);
        refine(&mut partition, &evaluate);
        let score = evaluate(&partition);
        consider(canonicalize(&partition), score, &mut best);
    }

    Ok(best.expect("at least one candidate").0)
}

/// Sequential allocation minimizing the Binder objective as each item lands.
fn greedy_allocation(order: &[usize], pi: &DMatrix<f64>) -> Vec<usize> {
    let p = order.len();
    let mut partition = vec![usize::MAX; p];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &item in order {
        // Cost of joining cluster c: sum over members of (1 - 2 pi); a new
        // singleton costs 0.
        let mut best_cluster = clusters.len();
        let mut best_cost = 0.0;
        for (c, members) in clusters.iter().enumerate() {
            let cost: f64 = members.iter().map(|&m| 1.0 - 2.0 * pi[(item, m)]).sum();
            if cost < best_cost {
                best_cost = cost;
                best_cluster = c;
            }
        }
        if best_cluster == clusters.len() {
            clusters.push(vec![item]);
        } else {
            clusters[best_cluster].push(item);
        }
        partition[item] = best_cluster;
    }
    partition
}

/// Single-item reassignment passes until no move improves the loss.
fn refine(partition: &mut [usize], evaluate: &dyn Fn(&[usize]) -> f64) {
    let p = partition.len();
    let mut current = evaluate(partition);
    for _pass in 0..100 {
        let mut improved = false;
        for item in 0..p {
            let original = partition[item];
            let max_label = *partition.iter().max().unwrap();
            let mut best_label = original;
            let mut best_score = current;
            // Existing clusters plus one empty label.
            for label in 0..=(max_label + 1) {
                if label == original {
                    continue;
                }
                partition[item] = label;
                let score = evaluate(partition);
                if score < best_score - 1e-12 {
                    best_score = score;
                    best_label = label;
                }
            }
            partition[item] = best_label;
            if best_label != original {
                current = best_score;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

/// Expected Binder loss with unit costs, computed from the co-clustering
/// probabilities: pairs clustered together cost `1 - pi`, pairs apart `pi`.
pub fn expected_binder_loss(partition: &[usize], pi: &DMatrix<f64>) -> f64 {
    let p = partition.len();
    let mut loss = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let pij: f64 = pi[(i, j)];
            if partition[i] == partition[j] {
                loss += 1.0 - pij;
            } else {
                loss += pij;
            }
        }
    }
    loss
}

/// Expected variation of information, averaged over the sampled partitions.
pub fn expected_vi_loss(
    partition: &[usize],
    weighted_samples: &[(Vec<usize>, usize)],
    total: usize,
) -> f64 {
    weighted_samples
        .iter()
        .map(|(z, w)| *w as f64 * variation_of_information(partition, z))
        .sum::<f64>()
        / total as f64
}

/// Variation of information between two partitions (natural log).
pub fn variation_of_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut counts_a: HashMap<usize, f64> = HashMap::new();
    let mut counts_b: HashMap<usize, f64> = HashMap::new();
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    for (&la, &lb) in a.iter().zip(b.iter()) {
        *counts_a.entry(la).or_insert(0.0) += 1.0;
        *counts_b.entry(lb).or_insert(0.0) += 1.0;
        *joint.entry((la, lb)).or_insert(0.0) += 1.0;
    }
    let h_a: f64 = counts_a.values().map(|c| -(c / n) * (c / n).ln()).sum();
    let h_b: f64 = counts_b.values().map(|c| -(c / n) * (c / n).ln()).sum();
    let mi: f64 = joint
        .iter()
        .map(|(&(la, lb), &c)| {
            let pj = c / n;
            pj * (pj / (counts_a[&la] / n * counts_b[&lb] / n)).ln()
        })
        .sum();
    (h_a + h_b - 2.0 * mi).max(0.0)
}

/// Renumbers labels by first appearance, preserving the spike label 0.
pub fn canonicalize(z: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut next = 1;
    z.iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                *map.entry(l).or_insert_with(|| {
                    let v = next;
                    next += 1;
                    v
                })
            }
        })
        .collect()
}

/// Final reported partition: unselected features are absorbed into the
/// spike, selected features keep their point-partition grouping with
/// clusters renumbered from 1.
pub fn absorb_unselected(partition: &[usize], selected: &[bool]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut next = 1;
    partition
        .iter()
        .zip(selected.iter())
        .map(|(&label, &keep)| {
            if !keep {
                0
            } else {
                *map.entry(label).or_insert_with(|| {
                    let v = next;
                    next += 1;
                    v
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn trace_from(betas: Vec<Vec<f64>>, zs: Vec<Vec<usize>>) -> ChainTrace {
        let p = betas[0].len();
        let t = betas.len();
        ChainTrace {
            feature_names: (0..p).map(|j| format!("f{j}")).collect(),
            beta: betas.into_iter().map(DVector::from_vec).collect(),
            z: zs,
            sigma2: vec![1.0; t],
            gamma2: vec![1.0; t],
            alpha: vec![1.0; t],
            k: vec![1; t],
            log_marginal: vec![0.0; t],
        }
    }

    #[test]
    fn all_zero_samples_give_degenerate_unselected_interval() {
        let trace = trace_from(
            vec![vec![0.0, 1.0], vec![0.0, 2.0]],
            vec![vec![0, 1], vec![0, 1]],
        );
        let s = credible_interval_select(&trace, 0.95).unwrap();
        assert_eq!(s.ci_lower[0], 0.0);
        assert_eq!(s.ci_upper[0], 0.0);
        assert!(!s.selected[0]);
        assert!(s.selected[1]);
        assert_eq!(s.inclusion_prob[0], 0.0);
        assert_eq!(s.inclusion_prob[1], 1.0);
    }

    #[test]
    fn half_level_interval_from_four_samples() {
        let trace = trace_from(
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![vec![1]; 4],
        );
        let s = credible_interval_select(&trace, 0.5).unwrap();
        // Outer 25%/75% empirical quantiles of (1,2,3,4).
        assert_abs_diff_eq!(s.ci_lower[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.ci_upper[0], 4.0, epsilon = 1e-12);
        assert!(s.selected[0]);
        assert_abs_diff_eq!(s.beta_mean[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn near_full_level_never_selects_when_a_zero_sample_exists() {
        let trace = trace_from(
            vec![vec![0.0], vec![5.0], vec![3.0]],
            vec![vec![0], vec![1], vec![1]],
        );
        let s = credible_interval_select(&trace, 0.999).unwrap();
        assert!(!s.selected[0]);
    }

    #[test]
    fn empty_trace_rejected() {
        let trace = ChainTrace::default();
        assert!(credible_interval_select(&trace, 0.95).is_err());
    }

    #[test]
    fn coclustering_single_sample_is_binary() {
        let trace = trace_from(vec![vec![1.0, 1.0, 0.0]], vec![vec![1, 1, 0]]);
        let pi = coclustering_matrix(&trace).unwrap();
        assert_eq!(pi[(0, 1)], 1.0);
        assert_eq!(pi[(0, 2)], 0.0);
        assert_eq!(pi[(2, 2)], 1.0);
    }

    #[test]
    fn coclustering_two_samples_halves() {
        let trace = trace_from(
            vec![vec![1.0, 1.0], vec![1.0, -1.0]],
            vec![vec![1, 1], vec![1, 2]],
        );
        let pi = coclustering_matrix(&trace).unwrap();
        assert_abs_diff_eq!(pi[(0, 1)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn spike_counts_as_shared_cluster() {
        let trace = trace_from(vec![vec![0.0, 0.0]], vec![vec![0, 0]]);
        let pi = coclustering_matrix(&trace).unwrap();
        assert_eq!(pi[(0, 1)], 1.0);
    }

    #[test]
    fn constant_trace_returns_that_partition() {
        let z = vec![1usize, 1, 2, 0];
        let trace = trace_from(
            vec![vec![1.0, 1.0, -2.0, 0.0]; 5],
            vec![z.clone(); 5],
        );
        for loss in [PartitionLoss::Binder, PartitionLoss::Vi] {
            let part = point_partition(&trace, loss, 4, 7).unwrap();
            assert_eq!(canonicalize(&part), canonicalize(&z));
        }
    }

    #[test]
    fn high_coclustering_pair_shares_label_under_binder() {
        // Two features together in 9 of 10 samples.
        let mut zs = vec![vec![1usize, 1]; 9];
        zs.push(vec![1, 2]);
        let betas = vec![vec![1.0, 1.0]; 10];
        let trace = trace_from(betas, zs);
        let part = point_partition(&trace, PartitionLoss::Binder, 4, 3).unwrap();
        assert_eq!(part[0], part[1]);
    }

    #[test]
    fn output_never_scores_worse_than_sampled_partitions() {
        // Random small traces; exhaustive check against each sampled
        // partition under both losses.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let p = 4 + (trial % 5);
            let t = 12;
            let mut zs = Vec::new();
            for _ in 0..t {
                let z: Vec<usize> = (0..p).map(|_| rng.random_range(0..3usize)).collect();
                zs.push(z);
            }
            let betas = vec![vec![0.0; p]; t];
            let trace = trace_from(betas, zs.clone());
            let pi = coclustering_matrix(&trace).unwrap();
            let mut weighted: HashMap<Vec<usize>, usize> = HashMap::new();
            for z in &zs {
                *weighted.entry(canonicalize(z)).or_insert(0) += 1;
            }
            let weighted: Vec<(Vec<usize>, usize)> = weighted.into_iter().collect();

            for loss in [PartitionLoss::Binder, PartitionLoss::Vi] {
                let part = point_partition(&trace, loss, 3, trial as u64).unwrap();
                let score = match loss {
                    PartitionLoss::Binder => expected_binder_loss(&part, &pi),
                    PartitionLoss::Vi => expected_vi_loss(&part, &weighted, t),
                };
                for z in &zs {
                    let other = match loss {
                        PartitionLoss::Binder => expected_binder_loss(z, &pi),
                        PartitionLoss::Vi => expected_vi_loss(z, &weighted, t),
                    };
                    assert!(
                        score <= other + 1e-9,
                        "trial {trial}: {score} > {other} under {loss:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn certain_pairs_are_never_split_nor_joined() {
        // Features 0,1 always together; feature 2 never with them.
        let zs = vec![
            vec![1usize, 1, 2],
            vec![2, 2, 1],
            vec![1, 1, 3],
            vec![3, 3, 1],
        ];
        let trace = trace_from(vec![vec![0.0; 3]; 4], zs);
        let part = point_partition(&trace, PartitionLoss::Binder, 6, 11).unwrap();
        assert_eq!(part[0], part[1]);
        assert_ne!(part[0], part[2]);
    }

    #[test]
    fn relabeling_trace_leaves_summary_invariant() {
        let zs = vec![vec![1usize, 2, 0], vec![2, 1, 0]];
        let relabeled = vec![vec![2usize, 1, 0], vec![1, 2, 0]];
        let betas = vec![vec![1.0, -1.0, 0.0]; 2];
        let a = trace_from(betas.clone(), zs);
        let b = trace_from(betas, relabeled);
        assert_eq!(coclustering_matrix(&a).unwrap(), coclustering_matrix(&b).unwrap());
        let sa = credible_interval_select(&a, 0.9).unwrap();
        let sb = credible_interval_select(&b, 0.9).unwrap();
        assert_eq!(sa.selected, sb.selected);
    }

    #[test]
    fn absorb_rule_sends_unselected_to_spike() {
        let partition = vec![3, 3, 1, 2];
        let selected = vec![true, true, false, true];
        let reported = absorb_unselected(&partition, &selected);
        assert_eq!(reported, vec![1, 1, 0, 2]);
    }
}
