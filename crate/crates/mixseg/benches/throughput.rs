//! Criterion benches for the hot paths: projection, cost tables, the full
//! maximization step and a small end-to-end fit.
//!
//! With the default `parallel` feature each group is measured on rayon pools
//! of 1 thread and of every available core, so one run shows the scaling;
//! group names carry the mode. Build with `--no-default-features` to measure
//! the true sequential fallback and compare against a saved baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mixseg::em::{m_step, EmConfig};
use mixseg::segcost::{build_stats, cost_table};
use mixseg::simulate::{generate_cosine, SimSpec};
use mixseg::types::{CoefficientTensor, ModelConfig, Responsibilities};
use mixseg::wavelet::{project_dataset, WaveletConfig};
use ndarray::Array2;

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn prepared_coefficients(n: usize, d: usize) -> CoefficientTensor {
    let bundle = generate_cosine(&SimSpec::cosine(n, d, 1.0, 77)).unwrap();
    project_dataset(&bundle.dataset, &WaveletConfig::haar(3)).unwrap()
}

fn flat_responsibilities(n: usize, k: usize) -> Responsibilities {
    Responsibilities::new(Array2::from_elem((n, k), 1.0 / k as f64)).unwrap()
}

/// Runs `f` once per measured pool size. Without the parallel feature there
/// is nothing to vary, so `f` runs on the single implicit thread.
fn for_each_pool(mut f: impl FnMut(&str, &dyn Fn(&dyn Fn()))) {
    #[cfg(feature = "parallel")]
    {
        for threads in [1, num_threads()] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let label = format!("{}threads", threads);
            f(&label, &|work| pool.install(work));
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        f("1thread", &|work| work());
    }
}

#[cfg(feature = "parallel")]
fn num_threads() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn bench_projection(c: &mut Criterion) {
    let bundle = generate_cosine(&SimSpec::cosine(100, 50, 1.0, 77)).unwrap();
    let mut group = c.benchmark_group(format!("project/{}", mode()));
    for_each_pool(|label, run| {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                run(&|| {
                    std::hint::black_box(
                        project_dataset(&bundle.dataset, &WaveletConfig::haar(3)).unwrap(),
                    );
                })
            })
        });
    });
    group.finish();
}

fn bench_cost_table(c: &mut Criterion) {
    for d in [50, 100] {
        let y = prepared_coefficients(100, d);
        let stats = build_stats(&y);
        let weights = vec![1.0; 100];
        let mut group = c.benchmark_group(format!("cost_table/{}/d{}", mode(), d));
        for_each_pool(|label, run| {
            group.bench_function(BenchmarkId::from_parameter(label), |b| {
                b.iter(|| run(&|| {
                    std::hint::black_box(cost_table(&stats, &weights, 1));
                }))
            });
        });
        group.finish();
    }
}

fn bench_m_step(c: &mut Criterion) {
    for d in [50, 100] {
        let y = prepared_coefficients(100, d);
        let stats = build_stats(&y);
        let resp = flat_responsibilities(100, 3);
        let config = ModelConfig::new(vec![1, 2, 3], 1).unwrap();
        let mut group = c.benchmark_group(format!("m_step/{}/d{}", mode(), d));
        for_each_pool(|label, run| {
            group.bench_function(BenchmarkId::from_parameter(label), |b| {
                b.iter(|| run(&|| {
                    std::hint::black_box(m_step(&stats, &resp, &config).unwrap());
                }))
            });
        });
        group.finish();
    }
}

fn bench_fit(c: &mut Criterion) {
    let y = prepared_coefficients(60, 30);
    let config = ModelConfig::new(vec![1, 2, 3], 1).unwrap();
    let em = EmConfig {
        n_restarts: 2,
        seed: 5,
        ..EmConfig::default()
    };
    let mut group = c.benchmark_group(format!("fit/{}", mode()));
    group.sample_size(10);
    for_each_pool(|label, run| {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| run(&|| {
                std::hint::black_box(mixseg::em::fit(&y, &config, &em).unwrap());
            }))
        });
    });
    group.finish();
}

criterion_group!(benches, bench_projection, bench_cost_table, bench_m_step, bench_fit);
criterion_main!(benches);
