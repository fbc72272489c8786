//! Model-based clustering of functional curves with per-cluster time
//! segmentation.
//!
//! Curves are projected onto approximation coefficients of an orthonormal
//! Haar basis; the coefficient panel is modeled as a Gaussian mixture in
//! which every cluster carries its own segmentation of the time axis. The
//! fit alternates a log-space expectation step with an exact maximization
//! step solved by dynamic programming over segment costs. Structure
//! selection, seeded simulation generators, comparison baselines and
//! clustering/segmentation metrics round out the toolkit.
//!
//! Enable the default `parallel` feature for rayon-backed data parallelism;
//! without it every loop falls back to sequential iteration with identical
//! results.

#![forbid(unsafe_code)]

pub mod baselines;
pub mod em;
mod error;
mod exec;
pub mod metrics;
mod rng;
pub mod segcost;
pub mod selection;
pub mod simulate;
pub mod types;
pub mod wavelet;

pub use error::{Error, Result};
pub use types::{
    hard_assign, segment_labels, validate_params, CoefficientTensor, FitReport,
    FunctionalDataset, ModelConfig, ModelParams, Partition, Responsibilities, Violation,
};
