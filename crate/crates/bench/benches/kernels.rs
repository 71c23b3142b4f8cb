use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use phonaudit::geometry::{knn_distance, pca_fit};
use phonaudit::probes::{train_probe, LabeledSet, ProbeHyper};
use phonaudit::stats::student_t_cdf;

fn points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_distance");
    for n in [30, 64, 256] {
        let pts = points(n, 32, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| knn_distance(black_box(pts), 3).unwrap())
        });
    }
    group.finish();
}

fn pca(c: &mut Criterion) {
    let mut group = c.benchmark_group("pca_fit");
    for (n, dim) in [(120, 16), (120, 768)] {
        let pts = points(n, dim, 2);
        group.bench_with_input(BenchmarkId::new(format!("n{n}"), dim), &pts, |b, pts| {
            b.iter(|| pca_fit(black_box(pts), 0.95).unwrap())
        });
    }
    group.finish();
}

fn probe(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes: Vec<String> = (0..4).map(|i| format!("P{i}")).collect();
    let mut set = LabeledSet::default();
    for i in 0..960 {
        let label = i % 4;
        let v = (0..16).map(|d| if d == label { 3.0 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect();
        set.push(v, label);
    }
    let hyper = ProbeHyper::default();
    c.bench_function("train_probe_960x16x4", |b| b.iter(|| train_probe(black_box(&set), &classes, &hyper).unwrap()));
}

fn t_cdf(c: &mut Criterion) {
    c.bench_function("student_t_cdf", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for df in [1.0, 5.0, 30.0, 1000.0] {
                for t in [-3.0, -1.0, 0.5, 2.0, 4.5] {
                    s += student_t_cdf(black_box(t), df);
                }
            }
            s
        })
    });
}

criterion_group!(benches, knn, pca, probe, t_cdf);
criterion_main!(benches);
