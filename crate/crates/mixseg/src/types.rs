//! Core domain types, identifiability checks and hard assignment.
//!
//! Values are immutable after construction; constructors enforce structural
//! invariants (shapes, monotone breakpoints, positive variances) and return
//! [`Error`] on violation. Identifiability of a parameter set is a separate,
//! advisory concern reported by [`validate_params`] as a list of
//! [`Violation`]s.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance used when comparing real parameters for exact equality in the
/// identifiability checks. The distinctness conditions are stated with exact
/// equality; user-supplied floats get this much slack.
pub const PARAM_EQ_TOL: f64 = 1e-12;

/// Observed curves: `n` individuals, `d` time units, `H` samples per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    curves: Array3<f64>,
    time_labels: Option<Vec<String>>,
}

impl FunctionalDataset {
    pub fn new(curves: Array3<f64>, time_labels: Option<Vec<String>>) -> Result<Self> {
        let (n, d, h) = curves.dim();
        if n == 0 || d == 0 || h == 0 {
            return Err(Error::ShapeMismatch(format!(
                "dataset dimensions must all be >= 1, got {n} x {d} x {h}"
            )));
        }
        if let Some(labels) = &time_labels {
            if labels.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "{} time labels for {d} time units",
                    labels.len()
                )));
            }
        }
        if curves.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset contains non-finite entries".into()));
        }
        Ok(Self { curves, time_labels })
    }

    pub fn curves(&self) -> &Array3<f64> {
        &self.curves
    }

    pub fn time_labels(&self) -> Option<&[String]> {
        self.time_labels.as_deref()
    }

    pub fn n_individuals(&self) -> usize {
        self.curves.dim().0
    }

    pub fn n_units(&self) -> usize {
        self.curves.dim().1
    }

    pub fn samples_per_unit(&self) -> usize {
        self.curves.dim().2
    }
}

/// Basis coefficients: `n` individuals, `d` time units, `p` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    y: Array3<f64>,
    level: u32,
    source_len: usize,
}

impl CoefficientTensor {
    pub fn new(y: Array3<f64>, level: u32, source_len: usize) -> Result<Self> {
        let (n, d, p) = y.dim();
        if n == 0 || d == 0 || p == 0 {
            return Err(Error::ShapeMismatch(format!(
                "coefficient dimensions must all be >= 1, got {n} x {d} x {p}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "coefficient tensor contains non-finite entries".into(),
            ));
        }
        Ok(Self { y, level, source_len })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.y
    }

    /// Decomposition depth this tensor was produced at (0 = raw samples).
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of within-unit samples the coefficients were derived from.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn n_individuals(&self) -> usize {
        self.y.dim().0
    }

    pub fn n_units(&self) -> usize {
        self.y.dim().1
    }

    pub fn n_coeffs(&self) -> usize {
        self.y.dim().2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfigRepr {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: Vec<usize>,
    min_segment_len: usize,
}

/// Model structure: number of clusters, breakpoint count per cluster and the
/// minimum admissible segment length.
///
/// Clusters are stored sorted by breakpoint count (the canonical labeling),
/// so `breakpoint_counts()` is always non-decreasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfigRepr", into = "ModelConfigRepr")]
pub struct ModelConfig {
    breakpoint_counts: Vec<usize>,
    min_segment_len: usize,
}

impl ModelConfig {
    pub fn new(mut breakpoint_counts: Vec<usize>, min_segment_len: usize) -> Result<Self> {
        if breakpoint_counts.is_empty() {
            return Err(Error::InvalidConfig("at least one cluster required".into()));
        }
        if min_segment_len == 0 {
            return Err(Error::InvalidConfig("min_segment_len must be >= 1".into()));
        }
        breakpoint_counts.sort_unstable();
        Ok(Self { breakpoint_counts, min_segment_len })
    }

    pub fn n_clusters(&self) -> usize {
        self.breakpoint_counts.len()
    }

    pub fn breakpoint_counts(&self) -> &[usize] {
        &self.breakpoint_counts
    }

    pub fn min_segment_len(&self) -> usize {
        self.min_segment_len
    }

    /// Checks that every cluster's segments fit into `d` time units.
    pub fn check_feasible(&self, d: usize) -> Result<()> {
        for &l in &self.breakpoint_counts {
            if (l + 1) * self.min_segment_len > d {
                return Err(Error::InfeasibleSegmentation {
                    segments: l + 1,
                    min_segment_len: self.min_segment_len,
                    n_units: d,
                });
            }
        }
        Ok(())
    }
}

impl TryFrom<ModelConfigRepr> for ModelConfig {
    type Error = Error;

    fn try_from(repr: ModelConfigRepr) -> Result<Self> {
        if repr.k != repr.l.len() {
            return Err(Error::InvalidConfig(format!(
                "K = {} but L has {} entries",
                repr.k,
                repr.l.len()
            )));
        }
        ModelConfig::new(repr.l, repr.min_segment_len)
    }
}

impl From<ModelConfig> for ModelConfigRepr {
    fn from(cfg: ModelConfig) -> Self {
        ModelConfigRepr {
            k: cfg.breakpoint_counts.len(),
            l: cfg.breakpoint_counts,
            min_segment_len: cfg.min_segment_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelParamsRepr {
    pi: Vec<f64>,
    #[serde(rename = "T")]
    breakpoints: Vec<Vec<usize>>,
    mu: Vec<Vec<Vec<f64>>>,
    sigma: Vec<Vec<Vec<f64>>>,
}

/// Fitted or generating parameters of the mixture of segmentations.
///
/// `sigma` entries are variances. Breakpoints are 0-based exclusive with
/// sentinels: `breakpoints[k] = [0, t_1, ..., t_L, d]` and segment `l` covers
/// time units `(t_l, t_{l+1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParamsRepr", into = "ModelParamsRepr")]
pub struct ModelParams {
    pi: Vec<f64>,
    breakpoints: Vec<Vec<usize>>,
    mu: Vec<Vec<Vec<f64>>>,
    sigma: Vec<Vec<Vec<f64>>>,
}

impl ModelParams {
    pub fn new(
        pi: Vec<f64>,
        breakpoints: Vec<Vec<usize>>,
        mu: Vec<Vec<Vec<f64>>>,
        sigma: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::ShapeMismatch("empty mixture".into()));
        }
        if breakpoints.len() != k || mu.len() != k || sigma.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "pi has {k} clusters but T/mu/sigma have {}/{}/{}",
                breakpoints.len(),
                mu.len(),
                sigma.len()
            )));
        }
        if pi.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("mixture weights".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }

        let d = *breakpoints[0].last().ok_or_else(|| {
            Error::ShapeMismatch("breakpoint vector must contain sentinels".into())
        })?;
        let mut p = None;
        for (kk, t) in breakpoints.iter().enumerate() {
            if t.len() < 2 || t[0] != 0 || *t.last().unwrap() != d {
                return Err(Error::ShapeMismatch(format!(
                    "cluster {kk}: breakpoints must run from 0 to {d}"
                )));
            }
            if t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::ShapeMismatch(format!(
                    "cluster {kk}: breakpoints must be strictly increasing"
                )));
            }
            let segs = t.len() - 1;
            if mu[kk].len() != segs || sigma[kk].len() != segs {
                return Err(Error::ShapeMismatch(format!(
                    "cluster {kk}: {segs} segments but {} means and {} variances",
                    mu[kk].len(),
                    sigma[kk].len()
                )));
            }
            for (seg_mu, seg_sigma) in mu[kk].iter().zip(&sigma[kk]) {
                let pk = seg_mu.len();
                if pk == 0 || seg_sigma.len() != pk {
                    return Err(Error::ShapeMismatch(format!(
                        "cluster {kk}: mean/variance coordinate counts differ"
                    )));
                }
                match p {
                    None => p = Some(pk),
                    Some(prev) if prev != pk => {
                        return Err(Error::ShapeMismatch(
                            "coordinate count differs across segments".into(),
                        ))
                    }
                    _ => {}
                }
                if seg_mu.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("cluster {kk} means")));
                }
                if seg_sigma.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "cluster {kk}: variances must be finite and positive"
                    )));
                }
            }
        }
        Ok(Self { pi, breakpoints, mu, sigma })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn breakpoints(&self) -> &[Vec<usize>] {
        &self.breakpoints
    }

    pub fn mu(&self) -> &[Vec<Vec<f64>>] {
        &self.mu
    }

    pub fn sigma(&self) -> &[Vec<Vec<f64>>] {
        &self.sigma
    }

    pub fn n_clusters(&self) -> usize {
        self.pi.len()
    }

    pub fn n_units(&self) -> usize {
        *self.breakpoints[0].last().unwrap()
    }

    pub fn n_coeffs(&self) -> usize {
        self.mu[0][0].len()
    }

    pub fn breakpoint_counts(&self) -> Vec<usize> {
        self.breakpoints.iter().map(|t| t.len() - 2).collect()
    }

    /// Relabels clusters into the canonical order: non-decreasing breakpoint
    /// count, ties broken by the first-segment mean vector.
    pub fn canonicalized(&self) -> Self {
        let perm = canonical_permutation(self);
        self.permuted(&perm)
    }

    /// Applies a cluster permutation: new cluster `k` is old cluster `perm[k]`.
    pub(crate) fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            pi: perm.iter().map(|&k| self.pi[k]).collect(),
            breakpoints: perm.iter().map(|&k| self.breakpoints[k].clone()).collect(),
            mu: perm.iter().map(|&k| self.mu[k].clone()).collect(),
            sigma: perm.iter().map(|&k| self.sigma[k].clone()).collect(),
        }
    }
}

/// Order clusters by (breakpoint count, first-segment mean lexicographically).
pub(crate) fn canonical_permutation(params: &ModelParams) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..params.n_clusters()).collect();
    perm.sort_by(|&a, &b| {
        let la = params.breakpoints[a].len();
        let lb = params.breakpoints[b].len();
        la.cmp(&lb).then_with(|| {
            let ma = &params.mu[a][0];
            let mb = &params.mu[b][0];
            for (x, y) in ma.iter().zip(mb) {
                let ord = x.total_cmp(y);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    perm
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResponsibilitiesRepr {
    s: Vec<Vec<f64>>,
}

/// Posterior cluster membership probabilities, one row per individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResponsibilitiesRepr", into = "ResponsibilitiesRepr")]
pub struct Responsibilities {
    s: Array2<f64>,
}

impl Responsibilities {
    pub fn new(s: Array2<f64>) -> Result<Self> {
        let (n, k) = s.dim();
        if n == 0 || k == 0 {
            return Err(Error::ShapeMismatch("empty responsibility matrix".into()));
        }
        for (i, row) in s.outer_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig(format!(
                    "row {i}: responsibilities must lie in [0, 1]"
                )));
            }
            let total: f64 = row.sum();
            if (total - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidConfig(format!(
                    "row {i}: responsibilities sum to {total}, expected 1"
                )));
            }
        }
        Ok(Self { s })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn n_individuals(&self) -> usize {
        self.s.dim().0
    }

    pub fn n_clusters(&self) -> usize {
        self.s.dim().1
    }

    /// Column `k` as an owned contiguous vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.s.column(k).to_vec()
    }

    /// Total responsibility mass per cluster.
    pub fn cluster_masses(&self) -> Vec<f64> {
        (0..self.n_clusters()).map(|k| self.s.column(k).sum()).collect()
    }

    pub(crate) fn permuted_columns(&self, perm: &[usize]) -> Self {
        let (n, k) = self.s.dim();
        let mut out = Array2::zeros((n, k));
        for (new_k, &old_k) in perm.iter().enumerate() {
            out.column_mut(new_k).assign(&self.s.column(old_k));
        }
        Self { s: out }
    }
}

impl TryFrom<ResponsibilitiesRepr> for Responsibilities {
    type Error = Error;

    fn try_from(repr: ResponsibilitiesRepr) -> Result<Self> {
        let n = repr.s.len();
        let k = repr.s.first().map_or(0, Vec::len);
        if repr.s.iter().any(|row| row.len() != k) {
            return Err(Error::ShapeMismatch("ragged responsibility rows".into()));
        }
        let flat: Vec<f64> = repr.s.into_iter().flatten().collect();
        let s = Array2::from_shape_vec((n, k), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Responsibilities::new(s)
    }
}

impl From<Responsibilities> for ResponsibilitiesRepr {
    fn from(resp: Responsibilities) -> Self {
        ResponsibilitiesRepr {
            s: resp.s.outer_iter().map(|row| row.to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionRepr {
    z: Vec<usize>,
}

/// Hard cluster assignment; labels run from 1 to K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    z: Vec<usize>,
}

impl Partition {
    pub fn new(z: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::ShapeMismatch("empty partition".into()));
        }
        if let Some(bad) = z.iter().find(|&&v| v == 0 || v > n_clusters) {
            return Err(Error::InvalidConfig(format!(
                "partition label {bad} outside 1..={n_clusters}"
            )));
        }
        Ok(Self { z })
    }

    pub fn labels(&self) -> &[usize] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Largest label present (partitions may leave trailing clusters empty).
    pub fn max_label(&self) -> usize {
        self.z.iter().copied().max().unwrap_or(0)
    }
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;

    fn try_from(repr: PartitionRepr) -> Result<Self> {
        let max = repr.z.iter().copied().max().unwrap_or(0);
        Partition::new(repr.z, max.max(1))
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr { z: p.z }
    }
}

/// Result of one full fit: parameters, soft and hard assignments and the
/// log-likelihood trace of the winning restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ModelParams,
    pub responsibilities: Responsibilities,
    pub partition: Partition,
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

impl FitReport {
    /// Final log-likelihood reached by the fit.
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("non-empty trace")
    }
}

/// A violated identifiability condition. An empty violation list means the
/// parameter set is identifiable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Adjacent segments of one cluster share mean and variance in every
    /// coordinate, so the breakpoint between them is undetectable.
    AdjacentSegmentsIdentical { cluster: usize, segment: usize },
    /// Fewer coefficients than the largest segment count.
    TooFewCoefficients { p: usize, required: usize },
    /// Two clusters with the same breakpoint count are indistinguishable:
    /// same breakpoints, same means, same variances.
    DuplicateClusters { first: usize, second: usize },
    /// A mixture weight is not strictly positive.
    NonPositiveWeight { cluster: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AdjacentSegmentsIdentical { cluster, segment } => write!(
                f,
                "cluster {cluster}: segments {segment} and {} have identical mean and variance \
                 in every coordinate",
                segment + 1
            ),
            Violation::TooFewCoefficients { p, required } => write!(
                f,
                "{p} coefficients cannot identify up to {required} segments per cluster"
            ),
            Violation::DuplicateClusters { first, second } => {
                write!(f, "clusters {first} and {second} are indistinguishable")
            }
            Violation::NonPositiveWeight { cluster } => {
                write!(f, "cluster {cluster} has non-positive mixture weight")
            }
        }
    }
}

fn vecs_equal(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Checks a parameter set against the identifiability conditions.
///
/// Returns the (possibly empty) list of violations; shape inconsistencies
/// between `params`, `config` and the data dimensions are structural errors,
/// not violations.
pub fn validate_params(
    params: &ModelParams,
    config: &ModelConfig,
    d: usize,
    p: usize,
) -> Result<Vec<Violation>> {
    if params.n_clusters() != config.n_clusters() {
        return Err(Error::ShapeMismatch(format!(
            "params have {} clusters, config has {}",
            params.n_clusters(),
            config.n_clusters()
        )));
    }
    if params.n_units() != d {
        return Err(Error::ShapeMismatch(format!(
            "params cover {} time units, data has {d}",
            params.n_units()
        )));
    }
    if params.n_coeffs() != p {
        return Err(Error::ShapeMismatch(format!(
            "params have {} coordinates, data has {p}",
            params.n_coeffs()
        )));
    }
    let counts = params.breakpoint_counts();
    if counts != config.breakpoint_counts() {
        return Err(Error::ShapeMismatch(format!(
            "breakpoint counts {counts:?} do not match config {:?}",
            config.breakpoint_counts()
        )));
    }
    for (k, t) in params.breakpoints().iter().enumerate() {
        if t.windows(2).any(|w| w[1] - w[0] < config.min_segment_len()) {
            return Err(Error::InfeasibleSegmentation {
                segments: t.len() - 1,
                min_segment_len: config.min_segment_len(),
                n_units: d,
            });
        }
        let _ = k;
    }

    let mut violations = Vec::new();

    for (k, (mu_k, sigma_k)) in params.mu().iter().zip(params.sigma()).enumerate() {
        for l in 0..mu_k.len().saturating_sub(1) {
            if vecs_equal(&mu_k[l], &mu_k[l + 1], PARAM_EQ_TOL)
                && vecs_equal(&sigma_k[l], &sigma_k[l + 1], PARAM_EQ_TOL)
            {
                violations.push(Violation::AdjacentSegmentsIdentical { cluster: k, segment: l });
            }
        }
    }

    let required = counts.iter().max().unwrap() + 1;
    if p < required {
        violations.push(Violation::TooFewCoefficients { p, required });
    }

    for a in 0..params.n_clusters() {
        for b in a + 1..params.n_clusters() {
            if counts[a] != counts[b] {
                continue;
            }
            let same_t = params.breakpoints()[a] == params.breakpoints()[b];
            let same_theta = params.mu()[a]
                .iter()
                .zip(&params.mu()[b])
                .all(|(x, y)| vecs_equal(x, y, PARAM_EQ_TOL))
                && params.sigma()[a]
                    .iter()
                    .zip(&params.sigma()[b])
                    .all(|(x, y)| vecs_equal(x, y, PARAM_EQ_TOL));
            if same_t && same_theta {
                violations.push(Violation::DuplicateClusters { first: a, second: b });
            }
        }
    }

    for (k, &w) in params.pi().iter().enumerate() {
        if w <= 0.0 {
            violations.push(Violation::NonPositiveWeight { cluster: k });
        }
    }

    Ok(violations)
}

/// Maximum-responsibility assignment; ties go to the smallest label.
pub fn hard_assign(resp: &Responsibilities) -> Partition {
    let z = resp
        .matrix()
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_val = row[0];
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > best_val {
                    best = k;
                    best_val = v;
                }
            }
            best + 1
        })
        .collect();
    Partition { z }
}

/// Per-timepoint segment labels induced by a breakpoint vector (with
/// sentinels). Time unit `j` (1-based) gets the 1-based index of the segment
/// containing it.
pub fn segment_labels(breakpoints: &[usize]) -> Vec<usize> {
    let d = *breakpoints.last().unwrap_or(&0);
    let mut labels = Vec::with_capacity(d);
    for (seg, w) in breakpoints.windows(2).enumerate() {
        labels.extend(std::iter::repeat(seg + 1).take(w[1] - w[0]));
    }
    labels
}
