//! Comparison methods: a plain Gaussian mixture without time segmentation
//! and a pooled changepoint detector without clustering.

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::exec::par_map_indexed;
use crate::rng::{domain, substream};
use crate::segcost::{build_stats, cost_table};
use crate::types::{
    canonical_permutation, hard_assign, CoefficientTensor, FitReport, ModelParams,
    Responsibilities,
};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;
const EMPTY_CLUSTER_REL: f64 = 1e-3;
const VARIANCE_FLOOR_REL: f64 = 1e-8;

/// Which baseline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Gaussian mixture over flattened per-individual coefficient vectors.
    SimpleMix,
    /// Pooled optimal segmentation with a total breakpoint budget.
    SimpleSeg { total_breakpoints: usize },
}

/// Reshapes `n x d x p` coefficients into `n x 1 x (d * p)`: one time unit
/// whose coordinates enumerate (unit, coefficient) pairs.
pub fn flatten_units(y: &CoefficientTensor) -> CoefficientTensor {
    let (n, d, p) = y.values().dim();
    let mut flat = Array3::zeros((n, 1, d * p));
    for i in 0..n {
        for j in 0..d {
            for r in 0..p {
                flat[[i, 0, j * p + r]] = y.values()[[i, j, r]];
            }
        }
    }
    CoefficientTensor::new(flat, y.level(), y.source_len()).expect("finite by construction")
}

struct MixModel {
    pi: Vec<f64>,
    means: Vec<Vec<f64>>,
    shared_var: Vec<f64>,
}

struct MixRun {
    model: MixModel,
    resp: Array2<f64>,
    trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
}

fn mix_log_density(x: &Array2<f64>, model: &MixModel) -> Array2<f64> {
    let (n, m) = x.dim();
    let k = model.pi.len();
    let log_norm: f64 = model
        .shared_var
        .iter()
        .map(|v| -0.5 * (LN_2PI + v.ln()))
        .sum();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        for (kk, mean) in model.means.iter().enumerate() {
            let mut acc = log_norm;
            for c in 0..m {
                let diff = x[[i, c]] - mean[c];
                acc -= diff * diff / (2.0 * model.shared_var[c]);
            }
            out[[i, kk]] = acc;
        }
    }
    out
}

fn mix_e_step(x: &Array2<f64>, model: &MixModel) -> (Array2<f64>, f64) {
    let log_dens = mix_log_density(x, model);
    let (n, k) = log_dens.dim();
    let mut resp = Array2::zeros((n, k));
    let mut loglik = 0.0;
    for i in 0..n {
        let joint: Vec<f64> = (0..k)
            .map(|kk| model.pi[kk].ln() + log_dens[[i, kk]])
            .collect();
        let max = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + joint.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loglik += lse;
        for kk in 0..k {
            resp[[i, kk]] = (joint[kk] - lse).exp();
        }
    }
    (resp, loglik)
}

fn mix_m_step(x: &Array2<f64>, resp: &Array2<f64>, floor: f64) -> Result<MixModel> {
    let (n, m) = x.dim();
    let k = resp.dim().1;
    let threshold = EMPTY_CLUSTER_REL * n as f64 / k as f64;

    let masses: Vec<f64> = (0..k).map(|kk| resp.column(kk).sum()).collect();
    for (kk, &mass) in masses.iter().enumerate() {
        if mass < threshold {
            return Err(Error::EmptyCluster { cluster: kk, mass, threshold });
        }
    }

    let pi: Vec<f64> = masses.iter().map(|mass| mass / n as f64).collect();
    let mut means = vec![vec![0.0; m]; k];
    for i in 0..n {
        for kk in 0..k {
            let w = resp[[i, kk]];
            if w == 0.0 {
                continue;
            }
            for c in 0..m {
                means[kk][c] += w * x[[i, c]];
            }
        }
    }
    for (kk, mean) in means.iter_mut().enumerate() {
        for v in mean.iter_mut() {
            *v /= masses[kk];
        }
    }

    // one variance per coordinate, pooled across clusters
    let mut shared_var = vec![0.0; m];
    for i in 0..n {
        for (kk, mean) in means.iter().enumerate() {
            let w = resp[[i, kk]];
            if w == 0.0 {
                continue;
            }
            for c in 0..m {
                let diff = x[[i, c]] - mean[c];
                shared_var[c] += w * diff * diff;
            }
        }
    }
    for v in &mut shared_var {
        *v = (*v / n as f64).max(floor);
    }

    Ok(MixModel { pi, means, shared_var })
}

fn dirichlet_responsibilities(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    let mut s = Array2::zeros((n, k));
    for i in 0..n {
        let mut row: Vec<f64> = (0..k)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = row.iter().sum();
        for v in &mut row {
            *v /= total;
        }
        for (kk, v) in row.into_iter().enumerate() {
            s[[i, kk]] = v;
        }
    }
    s
}

fn mix_run(x: &Array2<f64>, init: Array2<f64>, floor: f64, em: &EmConfig) -> Result<MixRun> {
    let mut resp = init;
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut model = None;
    let mut n_iter = 0;
    for _ in 0..em.max_iter {
        let current = mix_m_step(x, &resp, floor)?;
        let (new_resp, ll) = mix_e_step(x, &current);
        trace.push(ll);
        resp = new_resp;
        model = Some(current);
        n_iter += 1;
        if (ll - prev_ll).abs() <= em.rel_tol * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        prev_ll = ll;
    }
    Ok(MixRun {
        model: model.expect("max_iter >= 1"),
        resp,
        trace,
        n_iter,
        converged,
    })
}

/// Gaussian mixture over flattened coefficient vectors: one mean per cluster
/// per (unit, coefficient) coordinate, one shared variance per coordinate.
///
/// Runs `em_config.n_restarts` successful restarts (at least that many random
/// initializations), retrying up to 100 attempts when restarts hit an empty
/// cluster; fails only if every attempt degenerates.
pub fn fit_simple_mix(
    y: &CoefficientTensor,
    n_clusters: usize,
    em_config: &EmConfig,
) -> Result<FitReport> {
    if n_clusters == 0 {
        return Err(Error::InvalidConfig("at least one cluster required".into()));
    }
    let flat = flatten_units(y);
    let (n, _, m) = flat.values().dim();
    let x = flat
        .values()
        .to_shape((n, m))
        .expect("flatten preserves the element count")
        .to_owned();

    let count = (n * m) as f64;
    let total: f64 = x.iter().sum();
    let total_sq: f64 = x.iter().map(|v| v * v).sum();
    let global_var = (total_sq / count - (total / count).powi(2)).max(0.0);
    let floor = if global_var > 0.0 { VARIANCE_FLOOR_REL * global_var } else { VARIANCE_FLOOR_REL };

    const MAX_ATTEMPTS: usize = 100;
    let target = em_config.n_restarts;
    let mut successes: Vec<(usize, MixRun)> = Vec::new();
    let mut next_attempt = 0;
    while successes.len() < target && next_attempt < MAX_ATTEMPTS {
        let batch = (target - successes.len()).min(MAX_ATTEMPTS - next_attempt);
        let runs: Vec<Result<Option<MixRun>>> = par_map_indexed(batch, |offset| {
            let attempt = next_attempt + offset;
            let mut rng = substream(em_config.seed, domain::INIT, attempt as u64);
            let init = dirichlet_responsibilities(&mut rng, n, n_clusters);
            match mix_run(&x, init, floor, em_config) {
                Ok(run) => Ok(Some(run)),
                Err(Error::EmptyCluster { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        });
        for (offset, run) in runs.into_iter().enumerate() {
            if let Some(run) = run? {
                successes.push((next_attempt + offset, run));
            }
        }
        next_attempt += batch;
    }
    if successes.is_empty() {
        return Err(Error::AllRestartsDegenerate { attempts: next_attempt });
    }

    let (_, best) = successes
        .into_iter()
        .reduce(|best, cand| {
            let best_ll = *best.1.trace.last().unwrap();
            let cand_ll = *cand.1.trace.last().unwrap();
            if cand_ll.total_cmp(&best_ll) == std::cmp::Ordering::Greater {
                cand
            } else {
                best
            }
        })
        .expect("non-empty");

    // embed as a one-unit segmented model so the report and its likelihood
    // are directly comparable through the main model's machinery
    let params = ModelParams::new(
        best.model.pi.clone(),
        vec![vec![0, 1]; n_clusters],
        best.model.means.iter().map(|mean| vec![mean.clone()]).collect(),
        (0..n_clusters)
            .map(|_| vec![best.model.shared_var.clone()])
            .collect(),
    )?;
    let perm = canonical_permutation(&params);
    let params = params.permuted(&perm);
    let responsibilities = Responsibilities::new(best.resp)?.permuted_columns(&perm);
    let partition = hard_assign(&responsibilities);
    Ok(FitReport {
        params,
        responsibilities,
        partition,
        loglik_trace: best.trace,
        n_iter: best.n_iter,
        converged: best.converged,
    })
}

/// Pools every individual with unit weight and segments the whole panel with
/// the given total breakpoint budget. Returns the breakpoints (with
/// sentinels) and the optimal cost.
pub fn fit_simple_seg(
    y: &CoefficientTensor,
    total_breakpoints: usize,
    min_segment_len: usize,
) -> Result<(Vec<usize>, f64)> {
    let stats = build_stats(y);
    let weights = vec![1.0; y.n_individuals()];
    let costs = cost_table(&stats, &weights, min_segment_len);
    crate::em::dp_segment(&costs, total_breakpoints, min_segment_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{dp_segment, log_likelihood};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

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

    #[test]
    fn flatten_enumerates_unit_coefficient_pairs() {
        let y = tensor(2, 3, 2, |i, j, r| (100 * i + 10 * j + r) as f64);
        let flat = flatten_units(&y);
        assert_eq!(flat.values().dim(), (2, 1, 6));
        assert_eq!(flat.values()[[1, 0, 4]], 120.0); // i=1, j=2, r=0
    }

    #[test]
    fn reported_loglik_matches_the_segmented_model_likelihood() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let y = tensor(10, 3, 2, |_, _, _| rng.gen_range(-2.0..2.0));
        let em = EmConfig::default().with_seed(4).with_restarts(3);
        let report = fit_simple_mix(&y, 2, &em).unwrap();

        let flat = flatten_units(&y);
        let ll = log_likelihood(&flat, &report.params).unwrap();
        assert_abs_diff_eq!(ll, report.loglik(), epsilon = 1e-8 * (1.0 + ll.abs()));
    }

    #[test]
    fn simple_mix_separates_two_obvious_groups() {
        let y = tensor(10, 2, 1, |i, _, _| if i < 5 { -4.0 } else { 4.0 });
        let noisy = tensor(10, 2, 1, |i, j, _| {
            y.values()[[i, j, 0]] + ((i * 3 + j) % 7) as f64 * 0.05
        });
        let em = EmConfig::default().with_seed(1).with_restarts(5);
        let report = fit_simple_mix(&noisy, 2, &em).unwrap();
        let first = report.partition.labels()[0];
        assert!(report.partition.labels()[..5].iter().all(|&z| z == first));
        assert!(report.partition.labels()[5..].iter().all(|&z| z != first));
    }

    #[test]
    fn simple_mix_single_cluster_works() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let y = tensor(6, 2, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        let em = EmConfig::default().with_seed(2).with_restarts(2);
        let report = fit_simple_mix(&y, 1, &em).unwrap();
        assert!(report.partition.labels().iter().all(|&z| z == 1));
        assert_eq!(report.params.pi(), &[1.0]);
    }

    #[test]
    fn simple_mix_trace_is_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(25);
        for seed in 0..10 {
            let y = tensor(8, 2, 2, |_, _, _| rng.gen_range(-2.0..2.0));
            let em = EmConfig::default().with_seed(seed).with_restarts(2);
            let report = fit_simple_mix(&y, 2, &em).unwrap();
            for w in report.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * (1.0 + w[1].abs()));
            }
        }
    }

    #[test]
    fn simple_seg_equals_pooled_dp_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(27);
        let y = tensor(4, 8, 1, |_, _, _| rng.gen_range(-2.0..2.0));
        let (t, cost) = fit_simple_seg(&y, 2, 1).unwrap();

        let stats = build_stats(&y);
        let costs = cost_table(&stats, &[1.0; 4], 1);
        let (t_direct, cost_direct) = dp_segment(&costs, 2, 1).unwrap();
        assert_eq!(t, t_direct);
        assert_eq!(cost, cost_direct);
    }

    #[test]
    fn simple_seg_recovers_a_global_shift() {
        let y = tensor(3, 8, 1, |i, j, _| {
            (if j < 5 { 0.0 } else { 6.0 }) + ((i * 5 + j * 3) % 4) as f64 * 0.1
        });
        let (t, _) = fit_simple_seg(&y, 1, 1).unwrap();
        assert_eq!(t, vec![0, 5, 8]);
    }

    #[test]
    fn simple_seg_zero_breakpoints() {
        let y = tensor(2, 4, 1, |_, j, _| j as f64);
        let (t, _) = fit_simple_seg(&y, 0, 1).unwrap();
        assert_eq!(t, vec![0, 4]);
    }

    #[test]
    fn simple_seg_infeasible_budget_is_an_error() {
        let y = tensor(2, 3, 1, |_, j, _| j as f64);
        assert!(fit_simple_seg(&y, 3, 1).is_err());
    }
}
