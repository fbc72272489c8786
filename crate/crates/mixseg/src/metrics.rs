//! Clustering and segmentation evaluation: adjusted Rand index, minimal
//! misclassification under label permutation, breakpoint Hausdorff distance
//! and parameter error summaries.

use crate::error::{Error, Result};
use crate::types::{ModelParams, Partition};
use serde::{Deserialize, Serialize};

fn choose2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

fn contingency(a: &Partition, b: &Partition) -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
    let ka = a.max_label();
    let kb = b.max_label();
    let mut table = vec![vec![0usize; kb]; ka];
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        table[la - 1][lb - 1] += 1;
    }
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..kb).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    (table, rows, cols)
}

/// Adjusted Rand index between two partitions via pair counting.
///
/// 1 means identical up to labels; a degenerate agreement (both partitions
/// trivial in the same way) also scores 1 by convention.
pub fn ari(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "partitions of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let (table, rows, cols) = contingency(a, b);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < f64::EPSILON {
        // both partitions are trivial; identical by pair counts
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    heap_permutations(&mut current, k, &mut out);
    out
}

fn heap_permutations(items: &mut Vec<usize>, size: usize, out: &mut Vec<Vec<usize>>) {
    if size == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..size {
        heap_permutations(items, size - 1, out);
        if size % 2 == 0 {
            items.swap(i, size - 1);
        } else {
            items.swap(0, size - 1);
        }
    }
}

/// Finds the label permutation maximizing agreement between two partitions.
///
/// Returns `(perm, mismatches)` where `perm[k]` is the 1-based estimated
/// label matched to true label `k + 1`, and `mismatches` is the number of
/// individuals left unmatched under the best permutation. Exhaustive over
/// `k!` permutations, intended for small cluster counts.
pub fn optimal_permutation(
    z_true: &Partition,
    z_hat: &Partition,
    k: usize,
) -> Result<(Vec<usize>, usize)> {
    if z_true.len() != z_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "partitions of length {} and {}",
            z_true.len(),
            z_hat.len()
        )));
    }
    if z_true.max_label() > k || z_hat.max_label() > k {
        return Err(Error::InvalidConfig(format!(
            "partition labels exceed k = {k}"
        )));
    }
    let n = z_true.len();
    let mut table = vec![vec![0usize; k]; k];
    for (&lt, &lh) in z_true.labels().iter().zip(z_hat.labels()) {
        table[lt - 1][lh - 1] += 1;
    }
    let mut best_perm = (0..k).collect::<Vec<_>>();
    let mut best_agree = 0usize;
    for perm in permutations(k) {
        let agree: usize = (0..k).map(|kk| table[kk][perm[kk]]).sum();
        if agree > best_agree {
            best_agree = agree;
            best_perm = perm;
        }
    }
    Ok((best_perm.into_iter().map(|v| v + 1).collect(), n - best_agree))
}

/// Minimal misclassification rate over label permutations; 0 iff the
/// partitions agree up to relabeling.
pub fn nce(z_true: &Partition, z_hat: &Partition, k: usize) -> Result<f64> {
    let (_, mismatches) = optimal_permutation(z_true, z_hat, k)?;
    Ok(mismatches as f64 / z_true.len() as f64)
}

/// Maximum normalized breakpoint deviation after aligning clusters by
/// `permutation` (as produced by [`optimal_permutation`]).
///
/// Defined only when every aligned pair has the same breakpoint count;
/// otherwise the mismatching cluster is reported in the error.
pub fn hausdorff(
    t_true: &[Vec<usize>],
    t_hat: &[Vec<usize>],
    d: usize,
    permutation: &[usize],
) -> Result<f64> {
    if permutation.len() != t_true.len() || t_hat.len() != t_true.len() {
        return Err(Error::ShapeMismatch(
            "permutation and breakpoint lists must cover every cluster".into(),
        ));
    }
    let mut worst = 0.0f64;
    for (k, t) in t_true.iter().enumerate() {
        let matched = &t_hat[permutation[k] - 1];
        if matched.len() != t.len() {
            return Err(Error::AlignmentMismatch {
                cluster_true: k,
                n_true: t.len() - 2,
                n_est: matched.len() - 2,
            });
        }
        for (a, b) in t[1..t.len() - 1].iter().zip(&matched[1..matched.len() - 1]) {
            let dev = (*a as f64 - *b as f64).abs() / d as f64;
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Nearest-match breakpoint deviation for a pooled segmentation: each true
/// interior breakpoint is compared to the closest estimated one.
pub fn hausdorff_nearest(t_true: &[Vec<usize>], t_est: &[usize], d: usize) -> f64 {
    let interior: Vec<usize> = t_est[1..t_est.len().saturating_sub(1)].to_vec();
    let mut worst = 0.0f64;
    for t in t_true {
        for &b in &t[1..t.len() - 1] {
            let nearest = interior
                .iter()
                .map(|&e| (e as f64 - b as f64).abs())
                .fold(f64::INFINITY, f64::min);
            let dev = if nearest.is_finite() { nearest / d as f64 } else { 1.0 };
            worst = worst.max(dev);
        }
    }
    worst
}

/// Elementwise absolute mean errors after cluster alignment, grouped by true
/// cluster (entries ordered segment-major within a cluster).
pub fn param_errors(
    params_true: &ModelParams,
    params_hat: &ModelParams,
    permutation: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if permutation.len() != params_true.n_clusters()
        || params_hat.n_clusters() != params_true.n_clusters()
    {
        return Err(Error::ShapeMismatch(
            "permutation must map every true cluster to an estimated one".into(),
        ));
    }
    let mut errors = Vec::with_capacity(params_true.n_clusters());
    for (k, mu_true) in params_true.mu().iter().enumerate() {
        let mu_hat = &params_hat.mu()[permutation[k] - 1];
        if mu_hat.len() != mu_true.len() {
            return Err(Error::AlignmentMismatch {
                cluster_true: k,
                n_true: mu_true.len() - 1,
                n_est: mu_hat.len() - 1,
            });
        }
        let mut cluster_errors = Vec::new();
        for (seg_true, seg_hat) in mu_true.iter().zip(mu_hat) {
            if seg_true.len() != seg_hat.len() {
                return Err(Error::ShapeMismatch(
                    "coordinate counts differ after alignment".into(),
                ));
            }
            cluster_errors.extend(seg_true.iter().zip(seg_hat).map(|(a, b)| (a - b).abs()));
        }
        errors.push(cluster_errors);
    }
    Ok(errors)
}

/// Full evaluation of an estimated clustering/segmentation against ground
/// truth. `hausdorff` is absent when the aligned breakpoint counts differ;
/// `mu_abs_errors` is empty in that case for the same reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ari: f64,
    pub nce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff: Option<f64>,
    pub mu_abs_errors: Vec<Vec<f64>>,
    pub permutation: Vec<usize>,
}

impl EvalReport {
    pub fn compute(
        z_true: &Partition,
        params_true: &ModelParams,
        z_hat: &Partition,
        params_hat: &ModelParams,
    ) -> Result<Self> {
        let k = params_true.n_clusters();
        let (permutation, mismatches) = optimal_permutation(z_true, z_hat, k)?;
        let ari_value = ari(z_true, z_hat)?;
        let nce_value = mismatches as f64 / z_true.len() as f64;
        let d = params_true.n_units();
        let haus =
            hausdorff(params_true.breakpoints(), params_hat.breakpoints(), d, &permutation).ok();
        let mu_abs_errors = if haus.is_some() {
            param_errors(params_true, params_hat, &permutation)?
        } else {
            Vec::new()
        };
        Ok(EvalReport {
            ari: ari_value,
            nce: nce_value,
            hausdorff: haus,
            mu_abs_errors,
            permutation,
        })
    }
}
