//! Prefix statistics over the coefficient tensor and exact segment costs.
//!
//! [`build_stats`] stores cumulative first and second moments along the time
//! axis, so any candidate segment's weighted mean and variance come from two
//! lookups per individual. [`segment_fit`] returns the exact minimizer of the
//! weighted segment cost; [`cost_table`] tabulates it for every admissible
//! `(t1, t2]`.

use crate::error::{Error, Result};
use crate::exec::par_map_indexed;
use crate::types::CoefficientTensor;
use ndarray::{Array2, Array3};

/// Relative factor for the variance floor; keeps the log-variance term
/// bounded on (near-)constant segments, where the unconstrained optimum
/// degenerates.
const VARIANCE_FLOOR_REL: f64 = 1e-8;

/// Cumulative sums of the coefficients and their squares along time.
///
/// Stored time-major: entry `(t, i, r)` holds the sum of `y[i][j][r]` over
/// `j <= t` (1-based `j`, so row `t = 0` is all zeros). The time-major layout
/// makes a segment query stream two contiguous blocks.
#[derive(Debug, Clone)]
pub struct SegmentStats {
    cum1: Array3<f64>,
    cum2: Array3<f64>,
    variance_floor: f64,
}

impl SegmentStats {
    pub fn n_units(&self) -> usize {
        self.cum1.dim().0 - 1
    }

    pub fn n_individuals(&self) -> usize {
        self.cum1.dim().1
    }

    pub fn n_coeffs(&self) -> usize {
        self.cum1.dim().2
    }

    /// Floor applied to fitted segment variances.
    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    /// Mean of coordinate `r` of individual `i` over the segment `(t1, t2]`.
    pub fn mean(&self, i: usize, t1: usize, t2: usize, r: usize) -> f64 {
        (self.cum1[[t2, i, r]] - self.cum1[[t1, i, r]]) / (t2 - t1) as f64
    }
}

/// Builds the prefix statistics in one pass, O(ndp).
pub fn build_stats(y: &CoefficientTensor) -> SegmentStats {
    let (n, d, p) = y.values().dim();
    let mut cum1 = Array3::zeros((d + 1, n, p));
    let mut cum2 = Array3::zeros((d + 1, n, p));
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for i in 0..n {
        for j in 0..d {
            for r in 0..p {
                let v = y.values()[[i, j, r]];
                cum1[[j + 1, i, r]] = cum1[[j, i, r]] + v;
                cum2[[j + 1, i, r]] = cum2[[j, i, r]] + v * v;
                total += v;
                total_sq += v * v;
            }
        }
    }
    let count = (n * d * p) as f64;
    let global_var = (total_sq / count - (total / count).powi(2)).max(0.0);
    let variance_floor = if global_var > 0.0 {
        VARIANCE_FLOOR_REL * global_var
    } else {
        VARIANCE_FLOOR_REL
    };
    SegmentStats { cum1, cum2, variance_floor }
}

/// Exact minimizer of the weighted cost of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFit {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub cost: f64,
}

/// Fits one segment `(t1, t2]` under per-individual weights.
///
/// Minimizes, over the segment mean and variance per coordinate,
/// `sum_r [ W * log(sigma_r) + (1/sigma_r) * sum_{j,i} w_i (y_ijr - mu_r)^2 ]`
/// with `W = (sum_i w_i) * (t2 - t1)`. The mean is the weight-averaged
/// per-individual segment mean; the variance is the weighted mean squared
/// deviation from it, floored at [`SegmentStats::variance_floor`].
pub fn segment_fit(
    stats: &SegmentStats,
    weights: &[f64],
    t1: usize,
    t2: usize,
) -> Result<SegmentFit> {
    let n = stats.n_individuals();
    let p = stats.n_coeffs();
    if weights.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {n} individuals",
            weights.len()
        )));
    }
    if t1 >= t2 || t2 > stats.n_units() {
        return Err(Error::EmptySegment { t1, t2 });
    }
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroWeight { mass });
    }

    let len = (t2 - t1) as f64;
    let total_weight = mass * len;
    let cum1 = stats.cum1.as_slice().expect("standard layout");
    let cum2 = stats.cum2.as_slice().expect("standard layout");
    let row = n * p;
    let base1 = t1 * row;
    let base2 = t2 * row;

    let mut sum1 = vec![0.0; p];
    let mut sum2 = vec![0.0; p];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let lo = i * p;
        for r in 0..p {
            sum1[r] += w * (cum1[base2 + lo + r] - cum1[base1 + lo + r]);
            sum2[r] += w * (cum2[base2 + lo + r] - cum2[base1 + lo + r]);
        }
    }

    let mut mu_hat = vec![0.0; p];
    let mut sigma_hat = vec![0.0; p];
    let mut cost = 0.0;
    for r in 0..p {
        let mu = sum1[r] / total_weight;
        let ss = (sum2[r] - sum1[r] * sum1[r] / total_weight).max(0.0);
        let sigma = (ss / total_weight).max(stats.variance_floor);
        mu_hat[r] = mu;
        sigma_hat[r] = sigma;
        cost += total_weight * sigma.ln() + ss / sigma;
    }
    Ok(SegmentFit { mu_hat, sigma_hat, cost })
}

/// Upper-triangular table of segment costs: entry `(t1, t2)` is the fitted
/// cost of `(t1, t2]` when `t2 - t1 >= min_segment_len`, `+inf` otherwise.
/// Rows are computed independently (in parallel with the `parallel` feature).
pub fn cost_table(stats: &SegmentStats, weights: &[f64], min_segment_len: usize) -> Array2<f64> {
    let d = stats.n_units();
    let min_len = min_segment_len.max(1);
    let rows: Vec<Vec<f64>> = par_map_indexed(d, |t1| {
        let mut row = vec![f64::INFINITY; d + 1];
        for (t2, slot) in row.iter_mut().enumerate().skip(t1 + min_len) {
            *slot = segment_fit(stats, weights, t1, t2)
                .expect("segment bounds and weights validated by caller")
                .cost;
        }
        row
    });

    let mut table = Array2::from_elem((d + 1, d + 1), f64::INFINITY);
    for (t1, row) in rows.into_iter().enumerate() {
        for (t2, cost) in row.into_iter().enumerate() {
            table[[t1, t2]] = cost;
        }
    }
    table
}
