use thiserror::Error;

/// Errors produced by model construction, fitting and evaluation.
///
/// Structural problems (wrong shapes, infeasible configurations) are kept
/// separate from identifiability violations, which are reported as data by
/// [`crate::types::validate_params`].
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("signal length {len} is not divisible by 2^{level}")]
    NotDivisible { len: usize, level: u32 },

    #[error("segment ({t1}, {t2}] is empty or reversed")]
    EmptySegment { t1: usize, t2: usize },

    #[error("total segment weight {mass:.3e} is not positive")]
    ZeroWeight { mass: f64 },

    #[error(
        "{segments} segments of length >= {min_segment_len} do not fit into {n_units} time units"
    )]
    InfeasibleSegmentation {
        segments: usize,
        min_segment_len: usize,
        n_units: usize,
    },

    #[error("cluster {cluster} is empty: responsibility mass {mass:.3e} < threshold {threshold:.3e}")]
    EmptyCluster {
        cluster: usize,
        mass: f64,
        threshold: f64,
    },

    #[error("all {attempts} restarts hit an empty cluster; no fit available")]
    AllRestartsDegenerate { attempts: usize },

    #[error(
        "breakpoint counts differ after alignment: true cluster {cluster_true} has {n_true} \
         breakpoints, matched estimate has {n_est}"
    )]
    AlignmentMismatch {
        cluster_true: usize,
        n_true: usize,
        n_est: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
