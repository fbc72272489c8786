//! EM estimation: responsibilities, proportion updates, exact dynamic
//! programming over breakpoints, and the multi-restart driver.
//!
//! The expectation step is computed in log space. The maximization step is
//! exact: proportions in closed form, then for each cluster the optimal
//! segmentation of the weighted cost table by the Bellman recurrence, and
//! closed-form segment means and variances. Restarts are independent and run
//! in parallel; results do not depend on thread count.

use crate::error::{Error, Result};
use crate::exec::par_map_indexed;
use crate::rng::{domain, substream};
use crate::segcost::{build_stats, cost_table, segment_fit, SegmentStats};
use crate::types::{
    canonical_permutation, hard_assign, CoefficientTensor, FitReport, ModelConfig, ModelParams,
    Responsibilities,
};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Fraction of `n / K` below which a cluster counts as empty.
const EMPTY_CLUSTER_REL: f64 = 1e-3;

/// How a restart's initial responsibilities are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Each row drawn from a flat Dirichlet.
    RandomResp,
    /// K-means on per-curve mean coefficient vectors, softened to 0.9/0.1.
    KmeansSummary,
}

/// Settings for the EM driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-6,
            n_restarts: 10,
            seed: 0,
            init: InitStrategy::RandomResp,
        }
    }
}

impl EmConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, n_restarts: usize) -> Self {
        self.n_restarts = n_restarts;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be > 0".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidConfig("n_restarts must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_shapes(y: &CoefficientTensor, params: &ModelParams) -> Result<()> {
    if params.n_units() != y.n_units() || params.n_coeffs() != y.n_coeffs() {
        return Err(Error::ShapeMismatch(format!(
            "params cover {} units x {} coordinates, data is {} x {}",
            params.n_units(),
            params.n_coeffs(),
            y.n_units(),
            y.n_coeffs()
        )));
    }
    Ok(())
}

/// Per-cluster log conditional densities, one row per individual.
fn log_density_matrix(y: &CoefficientTensor, params: &ModelParams) -> Array2<f64> {
    let (n, _, p) = y.values().dim();
    let k = params.n_clusters();

    // data-independent normalization and precision per (cluster, segment)
    let mut constants = Vec::with_capacity(k);
    let mut precisions = Vec::with_capacity(k);
    for kk in 0..k {
        let t = &params.breakpoints()[kk];
        let mut const_k = 0.0;
        let mut prec_k = Vec::with_capacity(t.len() - 1);
        for (l, w) in t.windows(2).enumerate() {
            let len = (w[1] - w[0]) as f64;
            let mut prec_l = Vec::with_capacity(p);
            for r in 0..p {
                let sigma = params.sigma()[kk][l][r];
                const_k += -0.5 * len * (LN_2PI + sigma.ln());
                prec_l.push(0.5 / sigma);
            }
            prec_k.push(prec_l);
        }
        constants.push(const_k);
        precisions.push(prec_k);
    }

    let rows: Vec<Vec<f64>> = par_map_indexed(n, |i| {
        let mut row = Vec::with_capacity(k);
        for kk in 0..k {
            let t = &params.breakpoints()[kk];
            let mut acc = constants[kk];
            for (l, w) in t.windows(2).enumerate() {
                let mu = &params.mu()[kk][l];
                let prec = &precisions[kk][l];
                for j in w[0]..w[1] {
                    for r in 0..p {
                        let diff = y.values()[[i, j, r]] - mu[r];
                        acc -= prec[r] * diff * diff;
                    }
                }
            }
            row.push(acc);
        }
        row
    });

    let mut out = Array2::zeros((n, k));
    for (i, row) in rows.into_iter().enumerate() {
        for (kk, v) in row.into_iter().enumerate() {
            out[[i, kk]] = v;
        }
    }
    out
}

fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn e_step_with_ll(y: &CoefficientTensor, params: &ModelParams) -> Result<(Responsibilities, f64)> {
    check_shapes(y, params)?;
    let log_dens = log_density_matrix(y, params);
    let log_pi: Vec<f64> = params.pi().iter().map(|w| w.ln()).collect();
    let (n, k) = log_dens.dim();
    let mut s = Array2::zeros((n, k));
    let mut loglik = 0.0;
    let mut joint = vec![0.0; k];
    for i in 0..n {
        for kk in 0..k {
            joint[kk] = log_pi[kk] + log_dens[[i, kk]];
        }
        let lse = logsumexp(&joint);
        loglik += lse;
        for kk in 0..k {
            s[[i, kk]] = (joint[kk] - lse).exp();
        }
    }
    Ok((Responsibilities::new(s)?, loglik))
}

/// Observed-data log-likelihood of the mixture at `params`.
pub fn log_likelihood(y: &CoefficientTensor, params: &ModelParams) -> Result<f64> {
    check_shapes(y, params)?;
    let log_dens = log_density_matrix(y, params);
    let log_pi: Vec<f64> = params.pi().iter().map(|w| w.ln()).collect();
    let (n, k) = log_dens.dim();
    let mut loglik = 0.0;
    let mut joint = vec![0.0; k];
    for i in 0..n {
        for kk in 0..k {
            joint[kk] = log_pi[kk] + log_dens[[i, kk]];
        }
        loglik += logsumexp(&joint);
    }
    Ok(loglik)
}

/// Posterior cluster membership probabilities at `params`.
pub fn e_step(y: &CoefficientTensor, params: &ModelParams) -> Result<Responsibilities> {
    e_step_with_ll(y, params).map(|(resp, _)| resp)
}

/// Mixture proportion update: column means of the responsibilities.
pub fn m_step_pi(resp: &Responsibilities) -> Vec<f64> {
    let n = resp.n_individuals() as f64;
    resp.cluster_masses().into_iter().map(|m| m / n).collect()
}

/// Expected complete-data log-likelihood at `params` under fixed
/// responsibilities (up to no additive constant).
pub(crate) fn q_value(
    y: &CoefficientTensor,
    params: &ModelParams,
    resp: &Responsibilities,
) -> f64 {
    let log_dens = log_density_matrix(y, params);
    let log_pi: Vec<f64> = params.pi().iter().map(|w| w.ln()).collect();
    let mut q = 0.0;
    for (i, row) in resp.matrix().outer_iter().enumerate() {
        for (kk, &s) in row.iter().enumerate() {
            if s > 0.0 {
                q += s * (log_pi[kk] + log_dens[[i, kk]]);
            }
        }
    }
    q
}

/// Exact minimum-cost segmentation into `l + 1` segments.
///
/// `costs` is the upper-triangular table from [`cost_table`]. Returns the
/// breakpoint vector with sentinels (`[0, ..., d]`) and the total cost; ties
/// are broken toward the smallest earlier breakpoint.
pub fn dp_segment(
    costs: &Array2<f64>,
    l: usize,
    min_segment_len: usize,
) -> Result<(Vec<usize>, f64)> {
    let d = costs.nrows() - 1;
    let min_len = min_segment_len.max(1);
    let n_seg = l + 1;
    if n_seg * min_len > d {
        return Err(Error::InfeasibleSegmentation {
            segments: n_seg,
            min_segment_len: min_len,
            n_units: d,
        });
    }

    // prev[t]: best cost covering (0, t] with the current segment count
    let mut prev: Vec<f64> = (0..=d).map(|t| costs[[0, t]]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n_seg.saturating_sub(1));
    for seg in 2..=n_seg {
        let mut cur = vec![f64::INFINITY; d + 1];
        let mut bk = vec![usize::MAX; d + 1];
        for t in seg * min_len..=d {
            let mut best = f64::INFINITY;
            let mut best_tp = usize::MAX;
            for tp in (seg - 1) * min_len..=t - min_len {
                let cand = prev[tp] + costs[[tp, t]];
                if cand < best {
                    best = cand;
                    best_tp = tp;
                }
            }
            cur[t] = best;
            bk[t] = best_tp;
        }
        back.push(bk);
        prev = cur;
    }

    let total = prev[d];
    if !total.is_finite() {
        return Err(Error::InfeasibleSegmentation {
            segments: n_seg,
            min_segment_len: min_len,
            n_units: d,
        });
    }

    let mut breakpoints = vec![d];
    let mut t = d;
    for bk in back.iter().rev() {
        t = bk[t];
        breakpoints.push(t);
    }
    breakpoints.push(0);
    breakpoints.reverse();
    Ok((breakpoints, total))
}

fn empty_cluster_threshold(n: usize, k: usize) -> f64 {
    EMPTY_CLUSTER_REL * n as f64 / k as f64
}

/// Exact maximization of the expected complete-data log-likelihood under
/// fixed responsibilities: proportions in closed form, then per cluster the
/// optimal segmentation and segment parameters.
pub fn m_step(
    stats: &SegmentStats,
    resp: &Responsibilities,
    config: &ModelConfig,
) -> Result<ModelParams> {
    let n = resp.n_individuals();
    let k = config.n_clusters();
    if resp.n_clusters() != k {
        return Err(Error::ShapeMismatch(format!(
            "responsibilities have {} clusters, config has {k}",
            resp.n_clusters()
        )));
    }
    if stats.n_individuals() != n {
        return Err(Error::ShapeMismatch(format!(
            "stats cover {} individuals, responsibilities {n}",
            stats.n_individuals()
        )));
    }

    let threshold = empty_cluster_threshold(n, k);
    for (kk, mass) in resp.cluster_masses().into_iter().enumerate() {
        if mass < threshold {
            return Err(Error::EmptyCluster { cluster: kk, mass, threshold });
        }
    }

    let pi = m_step_pi(resp);
    type ClusterFit = (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>);
    let per_cluster: Vec<Result<ClusterFit>> = par_map_indexed(k, |kk| {
        let weights = resp.column(kk);
        let costs = cost_table(stats, &weights, config.min_segment_len());
        let (breakpoints, _) =
            dp_segment(&costs, config.breakpoint_counts()[kk], config.min_segment_len())?;
        let mut mu_k = Vec::with_capacity(breakpoints.len() - 1);
        let mut sigma_k = Vec::with_capacity(breakpoints.len() - 1);
        for w in breakpoints.windows(2) {
            let fit = segment_fit(stats, &weights, w[0], w[1])?;
            mu_k.push(fit.mu_hat);
            sigma_k.push(fit.sigma_hat);
        }
        Ok((breakpoints, mu_k, sigma_k))
    });

    let mut breakpoints = Vec::with_capacity(k);
    let mut mu = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    for item in per_cluster {
        let (t, mu_k, sigma_k) = item?;
        breakpoints.push(t);
        mu.push(mu_k);
        sigma.push(sigma_k);
    }
    ModelParams::new(pi, breakpoints, mu, sigma)
}

struct EmRun {
    params: ModelParams,
    responsibilities: Responsibilities,
    trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
}

fn run_em(
    y: &CoefficientTensor,
    stats: &SegmentStats,
    init: Responsibilities,
    config: &ModelConfig,
    em_config: &EmConfig,
) -> Result<EmRun> {
    let mut resp = init;
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut params = None;
    let mut n_iter = 0;

    for _ in 0..em_config.max_iter {
        let current = m_step(stats, &resp, config)?;
        let (new_resp, ll) = e_step_with_ll(y, &current)?;
        trace.push(ll);
        resp = new_resp;
        params = Some(current);
        n_iter += 1;
        if (ll - prev_ll).abs() <= em_config.rel_tol * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    Ok(EmRun {
        params: params.expect("max_iter >= 1"),
        responsibilities: resp,
        trace,
        n_iter,
        converged,
    })
}

fn dirichlet_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = 1.0 - rng.gen::<f64>();
            -u.ln()
        })
        .collect();
    let total: f64 = row.iter().sum();
    for v in &mut row {
        *v /= total;
    }
    row
}

fn random_responsibilities(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Responsibilities {
    let mut s = Array2::zeros((n, k));
    for i in 0..n {
        for (kk, v) in dirichlet_row(rng, k).into_iter().enumerate() {
            s[[i, kk]] = v;
        }
    }
    Responsibilities::new(s).expect("rows normalized by construction")
}

/// Per-curve mean coefficient vectors, the summaries the k-means init runs on.
fn curve_summaries(y: &CoefficientTensor) -> Vec<Vec<f64>> {
    let (n, d, p) = y.values().dim();
    (0..n)
        .map(|i| {
            (0..p)
                .map(|r| (0..d).map(|j| y.values()[[i, j, r]]).sum::<f64>() / d as f64)
                .collect()
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_assignments(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    while centers.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|pt| {
                centers
                    .iter()
                    .map(|c| squared_distance(pt, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dists.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[next].clone());
    }

    let p = points[0].len();
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, pt) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dist = squared_distance(pt, center);
                if dist < best_dist {
                    best = c;
                    best_dist = dist;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(pt, _)| pt)
                .collect();
            if members.is_empty() {
                *center = points[rng.gen_range(0..n)].clone();
                continue;
            }
            for r in 0..p {
                center[r] = members.iter().map(|m| m[r]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assignment
}

fn kmeans_responsibilities(
    y: &CoefficientTensor,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Responsibilities {
    let n = y.n_individuals();
    if k == 1 {
        return Responsibilities::new(Array2::from_elem((n, 1), 1.0)).unwrap();
    }
    let assignment = kmeans_assignments(&curve_summaries(y), k, rng);
    let off = 0.1 / (k - 1) as f64;
    let mut s = Array2::from_elem((n, k), off);
    for (i, &a) in assignment.iter().enumerate() {
        s[[i, a]] = 0.9;
    }
    Responsibilities::new(s).expect("rows sum to one")
}

fn initial_responsibilities(
    y: &CoefficientTensor,
    k: usize,
    em_config: &EmConfig,
    restart: u64,
) -> Responsibilities {
    let mut rng = substream(em_config.seed, domain::INIT, restart);
    match em_config.init {
        InitStrategy::RandomResp => random_responsibilities(&mut rng, y.n_individuals(), k),
        InitStrategy::KmeansSummary => kmeans_responsibilities(y, k, &mut rng),
    }
}

fn select_best(outcomes: Vec<Option<EmRun>>) -> Result<EmRun> {
    let attempts = outcomes.len();
    let mut best: Option<EmRun> = None;
    for run in outcomes.into_iter().flatten() {
        let ll = *run.trace.last().unwrap();
        match &best {
            Some(b) if ll.total_cmp(b.trace.last().unwrap()) != std::cmp::Ordering::Greater => {}
            _ => best = Some(run),
        }
    }
    best.ok_or(Error::AllRestartsDegenerate { attempts })
}

/// Fits the model with seeded multi-restart EM and returns the report of the
/// restart with the highest final log-likelihood, canonically relabeled.
///
/// Restarts that hit an empty cluster are abandoned; if every restart
/// degenerates the fit fails with [`Error::AllRestartsDegenerate`].
pub fn fit(y: &CoefficientTensor, config: &ModelConfig, em_config: &EmConfig) -> Result<FitReport> {
    fit_with_inits(y, config, em_config, Vec::new())
}

/// As [`fit`], with extra warm-start responsibility matrices evaluated
/// alongside the random restarts (used by the model-structure search).
pub(crate) fn fit_with_inits(
    y: &CoefficientTensor,
    config: &ModelConfig,
    em_config: &EmConfig,
    warm_starts: Vec<Responsibilities>,
) -> Result<FitReport> {
    em_config.validate()?;
    config.check_feasible(y.n_units())?;
    let k = config.n_clusters();
    for ws in &warm_starts {
        if ws.n_individuals() != y.n_individuals() || ws.n_clusters() != k {
            return Err(Error::ShapeMismatch(
                "warm start responsibilities do not match data/config".into(),
            ));
        }
    }

    let stats = build_stats(y);
    let n_warm = warm_starts.len();
    let total_runs = n_warm + em_config.n_restarts;

    let outcomes: Vec<Result<Option<EmRun>>> = par_map_indexed(total_runs, |idx| {
        let init = if idx < n_warm {
            warm_starts[idx].clone()
        } else {
            initial_responsibilities(y, k, em_config, (idx - n_warm) as u64)
        };
        match run_em(y, &stats, init, config, em_config) {
            Ok(run) => Ok(Some(run)),
            // a degenerate restart is abandoned, not an error
            Err(Error::EmptyCluster { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let outcomes: Vec<Option<EmRun>> = outcomes.into_iter().collect::<Result<_>>()?;

    let best = select_best(outcomes)?;
    let perm = canonical_permutation(&best.params);
    let params = best.params.permuted(&perm);
    let responsibilities = best.responsibilities.permuted_columns(&perm);
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
