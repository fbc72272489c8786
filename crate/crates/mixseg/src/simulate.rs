//! Seeded data generators: the cosine mixture-of-segmentations process and
//! the neutral/active toy scenario, each bundled with its ground truth in
//! coefficient space.
//!
//! Generation is deterministic for a given seed regardless of thread count:
//! each individual draws from its own substream.

use crate::error::{Error, Result};
use crate::exec::par_map_indexed;
use crate::rng::{domain, substream};
use crate::types::{FunctionalDataset, ModelParams, Partition};
use crate::wavelet::dwt_haar_approx;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which generative process to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Cluster-signed cosines with per-segment period structure.
    Cosine,
    /// Three clusters, each active (mean 2, variance 1) in its own segment
    /// and neutral (mean 0, variance 0.1) elsewhere.
    ToyNeutralActive,
}

/// Full description of a simulated dataset.
///
/// `breakpoints` may be left empty to use the default layout: breakpoints
/// evenly spaced within each cluster (rounded down). `level` is the wavelet
/// depth at which the bundled true parameters are expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "H")]
    pub samples_per_unit: usize,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub n_clusters: usize,
    #[serde(rename = "L")]
    pub breakpoint_counts: Vec<usize>,
    pub pi: Vec<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<Vec<usize>>>,
    pub noise_sd: f64,
    pub seed: u64,
    pub scenario: Scenario,
    pub level: u32,
}

impl SimSpec {
    /// The cosine process with its standard shape: three clusters with 1, 2
    /// and 3 breakpoints, uniform weights, 32 samples per unit, unit noise,
    /// level-3 coefficients.
    pub fn cosine(n: usize, d: usize, alpha: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            samples_per_unit: 32,
            alpha,
            n_clusters: 3,
            breakpoint_counts: vec![1, 2, 3],
            pi: vec![1.0 / 3.0; 3],
            breakpoints: None,
            noise_sd: 1.0,
            seed,
            scenario: Scenario::Cosine,
            level: 3,
        }
    }

    /// The toy scenario: 60 individuals, 30 units of 16 samples, three
    /// clusters sharing one three-segment layout, level-2 coefficients.
    pub fn toy(seed: u64) -> Self {
        Self {
            n: 60,
            d: 30,
            samples_per_unit: 16,
            alpha: 1.0,
            n_clusters: 3,
            breakpoint_counts: vec![2, 2, 2],
            pi: vec![1.0 / 3.0; 3],
            breakpoints: None,
            noise_sd: 1.0,
            seed,
            scenario: Scenario::ToyNeutralActive,
            level: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.samples_per_unit == 0 {
            return Err(Error::InvalidConfig("n, d and H must be >= 1".into()));
        }
        if self.n_clusters == 0 || self.breakpoint_counts.len() != self.n_clusters {
            return Err(Error::InvalidConfig(format!(
                "K = {} but L has {} entries",
                self.n_clusters,
                self.breakpoint_counts.len()
            )));
        }
        if self.pi.len() != self.n_clusters {
            return Err(Error::InvalidConfig("pi must have one weight per cluster".into()));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.pi.iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidConfig("pi must be positive and sum to 1".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::InvalidConfig("noise_sd must be > 0".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidConfig("alpha must be >= 0".into()));
        }
        if self.samples_per_unit % (1usize << self.level) != 0 {
            return Err(Error::NotDivisible {
                len: self.samples_per_unit,
                level: self.level,
            });
        }
        for (k, &l) in self.breakpoint_counts.iter().enumerate() {
            if l + 1 > self.d {
                return Err(Error::InfeasibleSegmentation {
                    segments: l + 1,
                    min_segment_len: 1,
                    n_units: self.d,
                });
            }
            let _ = k;
        }
        if let Some(t) = &self.breakpoints {
            if t.len() != self.n_clusters {
                return Err(Error::InvalidConfig("T must have one vector per cluster".into()));
            }
            for (k, tk) in t.iter().enumerate() {
                let l = self.breakpoint_counts[k];
                if tk.len() != l + 2
                    || tk[0] != 0
                    || *tk.last().unwrap() != self.d
                    || tk.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(Error::InvalidConfig(format!(
                        "cluster {k}: breakpoints must be 0 < t_1 < ... < t_{l} < d with sentinels"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Breakpoints actually used: the explicit override or the evenly spaced
    /// default `t_m = floor(m * d / (L + 1))`.
    pub fn resolved_breakpoints(&self) -> Vec<Vec<usize>> {
        match &self.breakpoints {
            Some(t) => t.clone(),
            None => self
                .breakpoint_counts
                .iter()
                .map(|&l| {
                    let mut t = vec![0];
                    t.extend((1..=l).map(|m| m * self.d / (l + 1)));
                    t.push(self.d);
                    t
                })
                .collect(),
        }
    }
}

/// A simulated dataset with its generating truth in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBundle {
    pub dataset: FunctionalDataset,
    pub z_true: Partition,
    pub params_true: ModelParams,
    pub spec: SimSpec,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per pair of uniforms
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn draw_cluster(rng: &mut ChaCha8Rng, pi: &[f64]) -> usize {
    let mut target: f64 = rng.gen();
    for (k, &w) in pi.iter().enumerate() {
        if target < w {
            return k;
        }
        target -= w;
    }
    pi.len() - 1
}

/// Per-unit signal templates, one per (cluster, segment) cell.
fn cosine_templates(spec: &SimSpec) -> Vec<Vec<Vec<f64>>> {
    let h = spec.samples_per_unit;
    (0..spec.n_clusters)
        .map(|k| {
            let sign = if (k + 1) % 2 == 1 { -1.0 } else { 1.0 };
            (0..=spec.breakpoint_counts[k])
                .map(|l| {
                    (1..=h)
                        .map(|s| {
                            let u = s as f64 / h as f64;
                            sign * spec.alpha
                                * (std::f64::consts::TAU * u / (1.0 + l as f64)).cos()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn toy_templates(spec: &SimSpec) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    // cluster k is active (mean 2, variance 1) exactly in segment k and
    // neutral (mean 0, variance 0.1) elsewhere
    let h = spec.samples_per_unit;
    let means = (0..spec.n_clusters)
        .map(|k| {
            (0..=spec.breakpoint_counts[k])
                .map(|l| vec![if l == k { 2.0 } else { 0.0 }; h])
                .collect()
        })
        .collect();
    let cell_vars = (0..spec.n_clusters)
        .map(|k| {
            (0..=spec.breakpoint_counts[k])
                .map(|l| if l == k { 1.0 } else { 0.1 })
                .collect()
        })
        .collect();
    (means, cell_vars)
}

fn assemble_bundle(
    spec: &SimSpec,
    mean_templates: Vec<Vec<Vec<f64>>>,
    sd_per_cell: impl Fn(usize, usize) -> f64 + Sync,
    coeff_var: impl Fn(usize, usize) -> f64,
) -> Result<SimBundle> {
    let breakpoints = spec.resolved_breakpoints();
    let (n, d, h) = (spec.n, spec.d, spec.samples_per_unit);
    let p = h >> spec.level;

    // per-unit segment index lookup for each cluster
    let seg_of: Vec<Vec<usize>> = breakpoints
        .iter()
        .map(|t| {
            let mut lookup = vec![0usize; d];
            for (l, w) in t.windows(2).enumerate() {
                for slot in lookup.iter_mut().take(w[1]).skip(w[0]) {
                    *slot = l;
                }
            }
            lookup
        })
        .collect();

    let per_individual: Vec<(usize, Vec<f64>)> = par_map_indexed(n, |i| {
        let mut rng = substream(spec.seed, domain::SIMULATE, i as u64);
        let z = draw_cluster(&mut rng, &spec.pi);
        let mut values = Vec::with_capacity(d * h);
        for j in 0..d {
            let l = seg_of[z][j];
            let template = &mean_templates[z][l];
            let sd = sd_per_cell(z, l);
            for &m in template.iter() {
                values.push(m + sd * standard_normal(&mut rng));
            }
        }
        (z, values)
    });

    let mut curves = Array3::zeros((n, d, h));
    let mut z_true = Vec::with_capacity(n);
    for (i, (z, values)) in per_individual.into_iter().enumerate() {
        z_true.push(z + 1);
        for j in 0..d {
            for s in 0..h {
                curves[[i, j, s]] = values[j * h + s];
            }
        }
    }

    // ground truth in coefficient space: exact projection of the noiseless
    // templates, plus the per-cell variance (preserved by the orthonormal
    // transform)
    let mut mu = Vec::with_capacity(spec.n_clusters);
    let mut sigma = Vec::with_capacity(spec.n_clusters);
    for (k, cluster_templates) in mean_templates.iter().enumerate() {
        let mut mu_k = Vec::with_capacity(cluster_templates.len());
        let mut sigma_k = Vec::with_capacity(cluster_templates.len());
        for (l, template) in cluster_templates.iter().enumerate() {
            mu_k.push(dwt_haar_approx(template, spec.level)?);
            sigma_k.push(vec![coeff_var(k, l); p]);
        }
        mu.push(mu_k);
        sigma.push(sigma_k);
    }
    let params_true = ModelParams::new(spec.pi.clone(), breakpoints, mu, sigma)?;

    Ok(SimBundle {
        dataset: FunctionalDataset::new(curves, None)?,
        z_true: Partition::new(z_true, spec.n_clusters)?,
        params_true,
        spec: spec.clone(),
    })
}

/// Generates the cosine process: individuals draw a cluster from `pi`; every
/// time unit in segment `l` of cluster `k` carries the same cosine template
/// with cluster-alternating sign and segment-dependent period, plus i.i.d.
/// Gaussian noise.
pub fn generate_cosine(spec: &SimSpec) -> Result<SimBundle> {
    if spec.scenario != Scenario::Cosine {
        return Err(Error::InvalidConfig("spec scenario is not the cosine process".into()));
    }
    spec.validate()?;
    let templates = cosine_templates(spec);
    let noise_var = spec.noise_sd * spec.noise_sd;
    assemble_bundle(spec, templates, |_, _| spec.noise_sd, |_, _| noise_var)
}

/// Generates the neutral/active toy scenario.
pub fn generate_toy(spec: &SimSpec) -> Result<SimBundle> {
    if spec.scenario != Scenario::ToyNeutralActive {
        return Err(Error::InvalidConfig("spec scenario is not the toy process".into()));
    }
    spec.validate()?;
    let first = spec.breakpoint_counts[0];
    if spec.breakpoint_counts.iter().any(|&l| l != first) || spec.n_clusters > first + 1 {
        return Err(Error::InvalidConfig(
            "toy scenario needs equal segment counts covering every cluster".into(),
        ));
    }
    let (means, cell_vars) = toy_templates(spec);
    let vars_for_coeffs = cell_vars.clone();
    assemble_bundle(
        spec,
        means,
        move |k, l| cell_vars[k][l].sqrt(),
        move |k, l| vars_for_coeffs[k][l],
    )
}

/// Dispatches on the spec's scenario.
pub fn generate(spec: &SimSpec) -> Result<SimBundle> {
    match spec.scenario {
        Scenario::Cosine => generate_cosine(spec),
        Scenario::ToyNeutralActive => generate_toy(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_params, ModelConfig, Violation};
    use crate::wavelet::{project_dataset, WaveletConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_cosine_breakpoints_are_evenly_spaced() {
        let spec = SimSpec::cosine(10, 50, 1.0, 1);
        let t = spec.resolved_breakpoints();
        assert_eq!(t[0], vec![0, 25, 50]);
        assert_eq!(t[1], vec![0, 16, 33, 50]);
        assert_eq!(t[2], vec![0, 12, 25, 37, 50]);
    }

    #[test]
    fn same_seed_gives_bit_identical_bundles() {
        let spec = SimSpec::cosine(12, 8, 0.7, 42);
        let a = generate_cosine(&spec).unwrap();
        let b = generate_cosine(&spec).unwrap();
        assert_eq!(a, b);
        let different = generate_cosine(&SimSpec::cosine(12, 8, 0.7, 43)).unwrap();
        assert_ne!(a.dataset, different.dataset);
    }

    #[test]
    fn cosine_truth_is_valid_for_positive_alpha() {
        let spec = SimSpec::cosine(5, 12, 1.0, 3);
        let bundle = generate_cosine(&spec).unwrap();
        let config = ModelConfig::new(spec.breakpoint_counts.clone(), 1).unwrap();
        let violations =
            validate_params(&bundle.params_true, &config, spec.d, 4).unwrap();
        assert!(violations.is_empty(), "unexpected violations: {violations:?}");
    }

    #[test]
    fn zero_alpha_degenerates_into_duplicate_clusters() {
        let mut spec = SimSpec::cosine(5, 12, 0.0, 3);
        spec.n_clusters = 2;
        spec.breakpoint_counts = vec![1, 1];
        spec.pi = vec![0.5, 0.5];
        let bundle = generate_cosine(&spec).unwrap();
        let config = ModelConfig::new(vec![1, 1], 1).unwrap();
        let violations =
            validate_params(&bundle.params_true, &config, spec.d, 4).unwrap();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateClusters { .. })));
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::AdjacentSegmentsIdentical { .. })));
    }

    #[test]
    fn true_means_equal_projection_of_noiseless_templates() {
        let spec = SimSpec::cosine(3, 10, 0.8, 9);
        let bundle = generate_cosine(&spec).unwrap();
        let templates = cosine_templates(&spec);
        for (k, cluster) in templates.iter().enumerate() {
            for (l, template) in cluster.iter().enumerate() {
                let projected = dwt_haar_approx(template, spec.level).unwrap();
                assert_eq!(bundle.params_true.mu()[k][l], projected);
            }
        }
    }

    #[test]
    fn generated_cell_means_converge_to_the_template() {
        // single-cluster spec so every unit shares one template
        let mut spec = SimSpec::cosine(320, 40, 1.0, 7);
        spec.n_clusters = 1;
        spec.breakpoint_counts = vec![0];
        spec.pi = vec![1.0];
        let bundle = generate_cosine(&spec).unwrap();
        let template = &cosine_templates(&spec)[0][0];

        let (n, d, h) = bundle.dataset.curves().dim();
        let samples = (n * d) as f64;
        let se = spec.noise_sd / samples.sqrt();
        for s in 0..h {
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..d {
                    total += bundle.dataset.curves()[[i, j, s]];
                }
            }
            let empirical = total / samples;
            assert!(
                (empirical - template[s]).abs() <= 3.0 * se,
                "sample {s}: |{empirical} - {}| > 3se ({se})",
                template[s]
            );
        }
    }

    #[test]
    fn toy_defaults_generate_with_shared_segmentation() {
        let spec = SimSpec::toy(11);
        let bundle = generate_toy(&spec).unwrap();
        assert_eq!(bundle.dataset.curves().dim(), (60, 30, 16));
        let t = bundle.params_true.breakpoints();
        assert_eq!(t[0], vec![0, 10, 20, 30]);
        assert!(t.iter().all(|tk| tk == &t[0]));
        // active mean 2 projects to 2 * 2^(level/2) = 4 at level 2
        assert_abs_diff_eq!(bundle.params_true.mu()[0][0][0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bundle.params_true.mu()[0][1][0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bundle.params_true.sigma()[0][0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bundle.params_true.sigma()[0][1][0], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn toy_with_three_individuals_generates() {
        let mut spec = SimSpec::toy(5);
        spec.n = 3;
        let bundle = generate_toy(&spec).unwrap();
        assert_eq!(bundle.z_true.len(), 3);
        assert!(bundle.z_true.labels().iter().all(|&z| (1..=3).contains(&z)));
    }

    #[test]
    fn projected_dataset_matches_truth_dimensions() {
        let spec = SimSpec::cosine(4, 6, 1.0, 2);
        let bundle = generate_cosine(&spec).unwrap();
        let y = project_dataset(&bundle.dataset, &WaveletConfig::haar(spec.level)).unwrap();
        assert_eq!(y.n_coeffs(), bundle.params_true.n_coeffs());
        assert_eq!(y.n_units(), bundle.params_true.n_units());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SimSpec::cosine(5, 12, 1.0, 3);
        spec.pi = vec![0.5, 0.5, 0.5];
        assert!(generate_cosine(&spec).is_err());

        let mut spec = SimSpec::cosine(5, 12, 1.0, 3);
        spec.samples_per_unit = 12; // not divisible by 2^3
        assert!(generate_cosine(&spec).is_err());

        let mut spec = SimSpec::cosine(5, 2, 1.0, 3);
        spec.breakpoint_counts = vec![1, 2, 3]; // 4 segments into 2 units
        assert!(generate_cosine(&spec).is_err());

        let spec = SimSpec::toy(3);
        assert!(generate_cosine(&spec).is_err());
    }
}
