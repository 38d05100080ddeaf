use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use svm_coreset::coreset::{build_coreset, CoresetConfig};
use svm_coreset::datagen::gen_blobs;
use svm_coreset::objective::{svm_objective, Hyperplane, ObjectiveContext};
use svm_coreset::par::with_threads;
use svm_coreset::sensitivity::{compute_sensitivities, SensitivityConfig};

fn pools() -> [(&'static str, Option<usize>); 2] {
    [("one_thread", Some(1)), ("default_pool", None)]
}

fn objective(c: &mut Criterion) {
    let ds = gen_blobs(50_000, 10, 4.0, 0).unwrap();
    let ctx = ObjectiveContext::for_dataset(1.0, &ds).unwrap();
    let w = Hyperplane::new(vec![0.1; 11]).unwrap();
    let mut group = c.benchmark_group("objective_50k_d10");
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || svm_objective(&ds, &w, &ctx).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn sensitivities(c: &mut Criterion) {
    let ds = gen_blobs(20_000, 8, 4.0, 1).unwrap();
    let cfg = SensitivityConfig::default();
    let mut group = c.benchmark_group("sensitivities_20k_d8");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || compute_sensitivities(&ds, &cfg).unwrap().table.t).unwrap())
        });
    }
    group.finish();
}

fn coreset(c: &mut Criterion) {
    let ds = gen_blobs(20_000, 8, 4.0, 2).unwrap();
    let cfg = CoresetConfig {
        m: Some(500),
        ..Default::default()
    };
    let mut group = c.benchmark_group("coreset_20k_d8_m500");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || build_coreset(&ds, &cfg).unwrap().len()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, objective, sensitivities, coreset);
criterion_main!(benches);
