//! Orthonormal Haar pyramid transform.
//!
//! One pass maps sample pairs `(a, b)` to an approximation `(a + b) / sqrt(2)`
//! and a detail `(a - b) / sqrt(2)`; repeating the pass on the approximation
//! vector yields the level-J decomposition. The orthonormal scaling keeps
//! i.i.d. Gaussian noise i.i.d. with the same variance in coefficient space,
//! which the homoscedastic model on coefficients relies on.

use crate::error::{Error, Result};
use crate::exec::par_map_indexed;
use crate::types::{CoefficientTensor, FunctionalDataset};
use ndarray::Array3;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Supported wavelet families. Only Haar is implemented; the enum leaves
/// room for smoother families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletFamily {
    Haar,
}

/// Projection settings: decomposition depth and family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletConfig {
    pub level: u32,
    pub family: WaveletFamily,
}

impl WaveletConfig {
    pub fn haar(level: u32) -> Self {
        Self { level, family: WaveletFamily::Haar }
    }
}

/// Full decomposition: the level-J approximation plus the detail vector of
/// every level, finest first. `details[j]` has length `H / 2^(j+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarDecomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

fn check_divisible(len: usize, level: u32) -> Result<()> {
    let block = 1usize
        .checked_shl(level)
        .ok_or(Error::NotDivisible { len, level })?;
    if len == 0 || len % block != 0 {
        return Err(Error::NotDivisible { len, level });
    }
    Ok(())
}

fn pyramid_pass(signal: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let half = signal.len() / 2;
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for pair in signal.chunks_exact(2) {
        approx.push((pair[0] + pair[1]) / SQRT_2);
        detail.push((pair[0] - pair[1]) / SQRT_2);
    }
    (approx, detail)
}

/// Level-`level` approximation coefficients of the orthonormal Haar
/// transform. The signal length must be divisible by `2^level`.
pub fn dwt_haar_approx(signal: &[f64], level: u32) -> Result<Vec<f64>> {
    check_divisible(signal.len(), level)?;
    let mut approx = signal.to_vec();
    for _ in 0..level {
        approx = pyramid_pass(&approx).0;
    }
    Ok(approx)
}

/// Full transform retaining the detail coefficients of every level.
pub fn dwt_haar_full(signal: &[f64], level: u32) -> Result<HaarDecomposition> {
    check_divisible(signal.len(), level)?;
    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(level as usize);
    for _ in 0..level {
        let (next, detail) = pyramid_pass(&approx);
        details.push(detail);
        approx = next;
    }
    Ok(HaarDecomposition { approx, details })
}

/// Exact inverse of [`dwt_haar_full`].
pub fn idwt_haar(decomposition: &HaarDecomposition) -> Vec<f64> {
    let mut approx = decomposition.approx.clone();
    for detail in decomposition.details.iter().rev() {
        let mut next = Vec::with_capacity(approx.len() * 2);
        for (a, d) in approx.iter().zip(detail) {
            next.push((a + d) / SQRT_2);
            next.push((a - d) / SQRT_2);
        }
        approx = next;
    }
    approx
}

/// Projects every (individual, time unit) sample vector to its level-J
/// approximation coefficients, giving `p = H / 2^J` coefficients per unit.
pub fn project_dataset(ds: &FunctionalDataset, cfg: &WaveletConfig) -> Result<CoefficientTensor> {
    let WaveletFamily::Haar = cfg.family;
    let h = ds.samples_per_unit();
    check_divisible(h, cfg.level)?;
    let (n, d, _) = ds.curves().dim();
    let p = h >> cfg.level;

    let rows: Vec<Vec<f64>> = par_map_indexed(n * d, |idx| {
        let (i, j) = (idx / d, idx % d);
        let unit: Vec<f64> = ds.curves().slice(ndarray::s![i, j, ..]).to_vec();
        dwt_haar_approx(&unit, cfg.level).expect("divisibility checked above")
    });

    let mut y = Array3::zeros((n, d, p));
    for (idx, row) in rows.into_iter().enumerate() {
        let (i, j) = (idx / d, idx % d);
        for (r, v) in row.into_iter().enumerate() {
            y[[i, j, r]] = v;
        }
    }
    CoefficientTensor::new(y, cfg.level, h)
}
