use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use shotcast_core::estimators::CovarianceVariant;
use shotcast_core::montecarlo::estimate_error_at;
use shotcast_core::synthetic::{generate_isotropic_task, SyntheticSpec};
use shotcast_core::{corrected_distance_matrix, embed_centers, predict_accuracy, CovarianceModel, MdsOptions, MonteCarloConfig, PredictOptions};

fn task(n: usize, k: usize, dim: usize) -> shotcast_core::FewShotTask {
    let spec = SyntheticSpec { n_ways: n, k_shots: k, dim, snr_db: 3.0, seed: 7, ..Default::default() };
    generate_isotropic_task(&spec).unwrap().task
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo");
    for n in [2usize, 5, 10] {
        let t = task(n, 5, 64);
        let centers = t.class_means();
        let cov = CovarianceModel::SharedIsotropic { variance: 1.0, dim: 64 };
        let cfg = MonteCarloConfig { samples_per_class: 10_000, seed: 1, parallel_streams: 1 };
        g.bench_with_input(BenchmarkId::from_parameter(n), &centers, |b, centers| {
            b.iter(|| estimate_error_at(black_box(centers), &cov, &cfg).unwrap())
        });
    }
    g.finish();
}

fn distances_and_mds(c: &mut Criterion) {
    let mut g = c.benchmark_group("distances");
    for n in [5usize, 20] {
        let t = task(n, 5, 512);
        g.bench_with_input(BenchmarkId::new("corrected", n), &t, |b, t| {
            b.iter(|| corrected_distance_matrix(black_box(t), CovarianceVariant::SharedIsotropic).unwrap())
        });
        let dm = corrected_distance_matrix(&t, CovarianceVariant::SharedIsotropic).unwrap();
        g.bench_with_input(BenchmarkId::new("smacof", n), &dm, |b, dm| {
            b.iter(|| embed_centers(black_box(dm), &MdsOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn predict(c: &mut Criterion) {
    let mut g = c.benchmark_group("predict");
    g.sample_size(20);
    for (n, k) in [(2usize, 10usize), (5, 5), (5, 50)] {
        let t = task(n, k, 512);
        g.bench_with_input(BenchmarkId::new(format!("{n}way"), k), &t, |b, t| {
            b.iter(|| predict_accuracy(black_box(t), &PredictOptions::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, distances_and_mds, predict);
criterion_main!(benches);
