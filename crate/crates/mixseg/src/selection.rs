//! Model-structure scoring and neighborhood search over (cluster count,
//! breakpoint counts).
//!
//! The score is a penalized likelihood (higher is better) with separate
//! penalties for the mixture weights, the per-segment means and breakpoints,
//! and the variances. The search is an iterated best-improvement local
//! search: from the current structure it evaluates removing a cluster,
//! adding a one-breakpoint cluster, and stepping each cluster's breakpoint
//! count by one, then accepts the best scoring neighbor until no neighbor
//! improves or the round budget is exhausted.

use crate::em::{fit, fit_with_inits, EmConfig};
use crate::error::{Error, Result};
use crate::types::{CoefficientTensor, FitReport, ModelConfig, Responsibilities};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Outcome of a structure search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub best_config: ModelConfig,
    pub best_fit: FitReport,
    pub bic: f64,
    /// Accepted states in order, including the initial one.
    pub search_trace: Vec<(ModelConfig, f64)>,
    pub budget_exhausted: bool,
}

/// Penalized model score at a fitted report; higher is better.
pub fn bic(y: &CoefficientTensor, fit: &FitReport, config: &ModelConfig) -> Result<f64> {
    let (n, d, p) = y.values().dim();
    if fit.params.n_units() != d || fit.params.n_coeffs() != p {
        return Err(Error::ShapeMismatch(format!(
            "fit covers {} units x {} coordinates, data is {d} x {p}",
            fit.params.n_units(),
            fit.params.n_coeffs()
        )));
    }
    if fit.params.breakpoint_counts() != config.breakpoint_counts() {
        return Err(Error::ShapeMismatch(
            "fit breakpoint counts do not match the config".into(),
        ));
    }
    let k = config.n_clusters() as f64;
    let n_f = n as f64;
    let ndp = (n * d * p) as f64;
    let ll = fit.loglik();

    let pen_weights = (k - 1.0) / 2.0 * n_f.ln();
    let mut pen_struct = 0.0;
    for t in fit.params.breakpoints() {
        let segments = (t.len() - 1) as f64;
        pen_struct += 3.0 * p as f64 * segments * ndp.ln();
        for w in t.windows(2) {
            let len = (w[1] - w[0]) as f64;
            pen_struct += (len / d as f64 * n_f * p as f64).ln();
        }
    }
    let pen_var = k / 2.0 * ndp.ln();
    Ok(ll - pen_weights - 0.5 * pen_struct - pen_var)
}

/// One candidate move: a config plus an optional warm-start responsibility
/// matrix carried over from the current fit.
struct Neighbor {
    config: ModelConfig,
    warm_start: Option<Responsibilities>,
}

/// Sorts breakpoint counts and returns, for each new cluster position, the
/// index it came from.
fn sorted_with_permutation(counts: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (counts[i], i));
    let sorted = order.iter().map(|&i| counts[i]).collect();
    (sorted, order)
}

fn remove_cluster_neighbor(
    current: &FitReport,
    config: &ModelConfig,
    removed: usize,
) -> Neighbor {
    let counts: Vec<usize> = config
        .breakpoint_counts()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != removed)
        .map(|(_, &l)| l)
        .collect();
    let new_config = ModelConfig::new(counts, config.min_segment_len()).expect("non-empty");

    // spread the removed cluster's responsibility evenly over the survivors
    let s = current.responsibilities.matrix();
    let (n, k) = s.dim();
    let share = 1.0 / (k - 1) as f64;
    let mut out = Array2::zeros((n, k - 1));
    for i in 0..n {
        let extra = s[[i, removed]] * share;
        let mut col = 0;
        for kk in 0..k {
            if kk == removed {
                continue;
            }
            out[[i, col]] = s[[i, kk]] + extra;
            col += 1;
        }
    }
    let warm = Responsibilities::new(out).ok();
    Neighbor { config: new_config, warm_start: warm }
}

fn add_cluster_neighbor(current: &FitReport, config: &ModelConfig) -> Neighbor {
    let mut counts = config.breakpoint_counts().to_vec();
    counts.push(1);
    let (sorted, order) = sorted_with_permutation(&counts);
    let new_config = ModelConfig::new(sorted, config.min_segment_len()).expect("non-empty");

    // seed the new cluster from the least-committed decile of individuals
    let s = current.responsibilities.matrix();
    let (n, k) = s.dim();
    let mut certainty: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let max = s.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (i, max)
        })
        .collect();
    certainty.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let decile = (n / 10).max(1);
    let seeded: Vec<usize> = certainty.iter().take(decile).map(|&(i, _)| i).collect();

    let mut grown = Array2::zeros((n, k + 1));
    for i in 0..n {
        let (new_mass, scale) = if seeded.contains(&i) { (0.9, 0.1) } else { (1e-3, 1.0 - 1e-3) };
        for kk in 0..k {
            grown[[i, kk]] = s[[i, kk]] * scale;
        }
        grown[[i, k]] = new_mass;
    }
    // reorder columns to match the sorted breakpoint counts
    let mut out = Array2::zeros((n, k + 1));
    for (new_col, &old_col) in order.iter().enumerate() {
        out.column_mut(new_col).assign(&grown.column(old_col));
    }
    Neighbor {
        config: new_config,
        warm_start: Responsibilities::new(out).ok(),
    }
}

fn step_breakpoints_neighbor(
    current: &FitReport,
    config: &ModelConfig,
    cluster: usize,
    delta: isize,
) -> Option<Neighbor> {
    let mut counts = config.breakpoint_counts().to_vec();
    let new_l = counts[cluster].checked_add_signed(delta)?;
    counts[cluster] = new_l;
    let (sorted, order) = sorted_with_permutation(&counts);
    let new_config = ModelConfig::new(sorted, config.min_segment_len()).ok()?;

    let s = current.responsibilities.matrix();
    let (n, k) = s.dim();
    let mut out = Array2::zeros((n, k));
    for (new_col, &old_col) in order.iter().enumerate() {
        out.column_mut(new_col).assign(&s.column(old_col));
    }
    Some(Neighbor {
        config: new_config,
        warm_start: Responsibilities::new(out).ok(),
    })
}

fn neighbors_of(current: &FitReport, config: &ModelConfig, d: usize, p: usize) -> Vec<Neighbor> {
    let k = config.n_clusters();
    let mut out = Vec::new();
    if k > 1 {
        for removed in 0..k {
            out.push(remove_cluster_neighbor(current, config, removed));
        }
    }
    if p >= 2 {
        out.push(add_cluster_neighbor(current, config));
    }
    for cluster in 0..k {
        for delta in [-1isize, 1] {
            if let Some(neighbor) = step_breakpoints_neighbor(current, config, cluster, delta) {
                out.push(neighbor);
            }
        }
    }
    // drop infeasible structures, structures the coefficients cannot
    // identify, and duplicate configs within the round
    let mut seen: Vec<Vec<usize>> = vec![config.breakpoint_counts().to_vec()];
    out.retain(|nb| {
        let counts = nb.config.breakpoint_counts().to_vec();
        let max_l = *counts.iter().max().unwrap();
        let feasible = nb.config.check_feasible(d).is_ok() && p >= max_l + 1;
        let fresh = !seen.contains(&counts);
        if feasible && fresh {
            seen.push(counts);
            true
        } else {
            false
        }
    });
    out
}

/// Iterated best-improvement search from `initial`, refitting each candidate
/// structure with the full restart policy plus a warm start carried over
/// from the incumbent. `budget` caps the number of neighborhood rounds;
/// `budget_exhausted` reports hitting that cap while still improving.
pub fn search(
    y: &CoefficientTensor,
    initial: &ModelConfig,
    em_config: &EmConfig,
    budget: usize,
) -> Result<SelectionResult> {
    let (_, d, p) = y.values().dim();
    let mut current_config = initial.clone();
    let mut current_fit = fit(y, &current_config, em_config)?;
    let mut current_bic = bic(y, &current_fit, &current_config)?;
    let mut trace = vec![(current_config.clone(), current_bic)];
    let mut evaluated: HashMap<Vec<usize>, f64> = HashMap::new();
    evaluated.insert(current_config.breakpoint_counts().to_vec(), current_bic);

    for _ in 0..budget {
        let candidates = neighbors_of(&current_fit, &current_config, d, p);
        let mut best: Option<(ModelConfig, FitReport, f64)> = None;
        for neighbor in candidates {
            let key = neighbor.config.breakpoint_counts().to_vec();
            if let Some(&seen_bic) = evaluated.get(&key) {
                // already fitted in an earlier round and it did not win then;
                // it can only win now against a higher incumbent, so skip
                if seen_bic <= current_bic {
                    continue;
                }
            }
            let warm = neighbor.warm_start.clone().into_iter().collect();
            let report = match fit_with_inits(y, &neighbor.config, em_config, warm) {
                Ok(report) => report,
                Err(Error::AllRestartsDegenerate { .. }) => continue,
                Err(e) => return Err(e),
            };
            let score = bic(y, &report, &neighbor.config)?;
            evaluated.insert(key, score);
            if best.as_ref().map_or(true, |(_, _, b)| score > *b) {
                best = Some((neighbor.config, report, score));
            }
        }
        match best {
            Some((config, report, score)) if score > current_bic => {
                current_config = config;
                current_fit = report;
                current_bic = score;
                trace.push((current_config.clone(), current_bic));
            }
            _ => {
                // local optimum: no neighbor improves
                return Ok(SelectionResult {
                    best_config: current_config,
                    best_fit: current_fit,
                    bic: current_bic,
                    search_trace: trace,
                    budget_exhausted: false,
                });
            }
        }
    }

    // every round accepted an improvement; stopped by the budget alone
    Ok(SelectionResult {
        best_config: current_config,
        best_fit: current_fit,
        bic: current_bic,
        search_trace: trace,
        budget_exhausted: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ModelParams, Partition};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor(n: usize, d: usize, p: usize, f: impl Fn(usize, usize, usize) -> f64) -> CoefficientTensor {
        let mut y = Array3::zeros((n, d, p));
        for i in 0..n {
            for j in 0..d {
                for r in 0..p {
                    y[[i, j, r]] = f(i, j, r);
                }
            }
        }
        CoefficientTensor::new(y, 0, p).unwrap()
    }

    fn report_with(params: ModelParams, n: usize, loglik: f64) -> FitReport {
        let k = params.n_clusters();
        let resp =
            Responsibilities::new(Array2::from_elem((n, k), 1.0 / k as f64)).unwrap();
        FitReport {
            partition: Partition::new(vec![1; n], k).unwrap(),
            params,
            responsibilities: resp,
            loglik_trace: vec![loglik],
            n_iter: 1,
            converged: true,
        }
    }

    #[test]
    fn extra_segment_at_equal_likelihood_scores_strictly_lower() {
        let y = tensor(6, 4, 2, |i, j, r| (i + j + r) as f64 * 0.1);
        let flat = ModelParams::new(
            vec![1.0],
            vec![vec![0, 4]],
            vec![vec![vec![0.0, 0.0]]],
            vec![vec![vec![1.0, 1.0]]],
        )
        .unwrap();
        let split = ModelParams::new(
            vec![1.0],
            vec![vec![0, 2, 4]],
            vec![vec![vec![0.0, 0.0], vec![0.0, 0.1]]],
            vec![vec![vec![1.0, 1.0], vec![1.0, 1.0]]],
        )
        .unwrap();
        let ll = -123.4;
        let score_flat = bic(
            &y,
            &report_with(flat, 6, ll),
            &ModelConfig::new(vec![0], 1).unwrap(),
        )
        .unwrap();
        let score_split = bic(
            &y,
            &report_with(split, 6, ll),
            &ModelConfig::new(vec![1], 1).unwrap(),
        )
        .unwrap();
        assert!(score_flat > score_split);
    }

    #[test]
    fn score_matches_hand_computation_for_the_simplest_model() {
        // n = 2, d = 2, p = 1, K = 1, L = (0): penalty is
        // 0 (weights) + 1/2 [3 ln(4) + ln(1 * 2 * 1)] + 1/2 ln(4)
        let y = tensor(2, 2, 1, |i, j, _| (i * 2 + j) as f64);
        let params = ModelParams::new(
            vec![1.0],
            vec![vec![0, 2]],
            vec![vec![vec![1.5]]],
            vec![vec![vec![1.25]]],
        )
        .unwrap();
        let ll = -7.0;
        let score = bic(
            &y,
            &report_with(params, 2, ll),
            &ModelConfig::new(vec![0], 1).unwrap(),
        )
        .unwrap();
        let expected = ll
            - 0.5 * (3.0 * 4.0f64.ln() + (1.0f64 * 2.0 * 1.0).ln())
            - 0.5 * 4.0f64.ln();
        assert_abs_diff_eq!(score, expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_budget_returns_the_initial_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = tensor(8, 4, 2, |_, _, _| rng.gen_range(-1.0..1.0));
        let initial = ModelConfig::new(vec![0, 0], 1).unwrap();
        let em = EmConfig::default().with_seed(5).with_restarts(2);
        let result = search(&y, &initial, &em, 0).unwrap();
        assert_eq!(result.best_config, initial);
        assert_eq!(result.search_trace.len(), 1);
        assert!(result.budget_exhausted);
    }

    #[test]
    fn search_collapses_to_one_cluster_on_homogeneous_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let y = tensor(24, 6, 2, |_, _, _| rng.gen_range(-0.5..0.5));
        let initial = ModelConfig::new(vec![0, 0, 0], 1).unwrap();
        let em = EmConfig::default().with_seed(6).with_restarts(3);
        let result = search(&y, &initial, &em, 6).unwrap();
        assert_eq!(result.best_config.n_clusters(), 1);
        assert!(!result.budget_exhausted);
    }

    #[test]
    fn accepted_trace_scores_strictly_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        // two clear groups so at least one improvement move exists
        let y = tensor(16, 6, 2, |i, _, r| {
            (if i < 8 { -2.0 } else { 2.0 }) + rng.gen_range(-0.3..0.3) + r as f64 * 0.1
        });
        let initial = ModelConfig::new(vec![0], 1).unwrap();
        let em = EmConfig::default().with_seed(7).with_restarts(3);
        let result = search(&y, &initial, &em, 5).unwrap();
        for w in result.search_trace.windows(2) {
            assert!(w[1].1 > w[0].1);
        }
        assert_abs_diff_eq!(
            result.bic,
            result.search_trace.last().unwrap().1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn search_skips_structures_the_coefficients_cannot_identify() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        // p = 1: any structure with a breakpoint needs p >= 2, so every
        // breakpoint move and cluster addition is skipped
        let y = tensor(10, 6, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        let initial = ModelConfig::new(vec![0, 0], 1).unwrap();
        let em = EmConfig::default().with_seed(8).with_restarts(2);
        let result = search(&y, &initial, &em, 4).unwrap();
        for (config, _) in &result.search_trace {
            let max_l = *config.breakpoint_counts().iter().max().unwrap();
            assert!(max_l + 1 <= 1);
        }
    }
}
