//! Hot-path benchmarks: Gram construction, the two entropy estimators with
//! gradients, HSIC, the median rule, and one full training epoch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mee_core::entropy;
use mee_core::kernels::{self, Bandwidth};
use mee_core::losses::Loss;
use mee_core::models::ModelSpec;
use mee_core::synthdata::{NoiseKind, ShiftScenario};
use mee_core::training::{self, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn residuals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn bench_kernels(c: &mut Criterion) {
    let sigma = Bandwidth::new(1.0).unwrap();
    let mut group = c.benchmark_group("gram_scalar");
    for n in [128usize, 512] {
        let e = residuals(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &e, |b, e| {
            b.iter(|| kernels::gram_scalar(black_box(e), sigma).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("median_rule");
    for n in [128usize, 512] {
        let e = residuals(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &e, |b, e| {
            b.iter(|| kernels::median_rule(black_box(e)).unwrap())
        });
    }
    group.finish();
}

fn bench_entropy(c: &mut Criterion) {
    let sigma = Bandwidth::new(1.0).unwrap();
    let e = residuals(128, 3);
    c.bench_function("matrix_h2_value_grad_128", |b| {
        b.iter(|| {
            Loss::MeeMatrix { sigma }
                .value_and_grad(black_box(&e), None)
                .unwrap()
        })
    });
    c.bench_function("kde_h2_value_grad_128", |b| {
        b.iter(|| {
            Loss::MeeKde { sigma }
                .value_and_grad(black_box(&e), None)
                .unwrap()
        })
    });
    c.bench_function("information_potential_512", |b| {
        let e = residuals(512, 4);
        b.iter(|| entropy::information_potential(black_box(&e), sigma).unwrap())
    });
}

fn bench_hsic(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((128, 100), |_| rng.random_range(-1.0..1.0));
    let e = residuals(128, 6);
    let loss = Loss::Hsic {
        sigma_x: Bandwidth::new(1.0).unwrap(),
        sigma_e: Bandwidth::new(1.0).unwrap(),
    };
    c.bench_function("hsic_value_grad_128x100", |b| {
        b.iter(|| loss.value_and_grad(black_box(&e), Some(x.view())).unwrap())
    });
}

fn bench_training_epoch(c: &mut Criterion) {
    let scenario = ShiftScenario::new(100, NoiseKind::ShiftedExponential, 0.0, 1000, 100, 100, 7);
    let data = scenario.gen_source(0);
    let spec = ModelSpec::linear(100);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: Some(128),
        learning_rate: 1e-4,
        seed: 1,
        ..TrainConfig::default()
    };
    let mee = Loss::MeeMatrix {
        sigma: Bandwidth::new(1.0).unwrap(),
    };
    c.bench_function("mee_epoch_1000x100_batch128", |b| {
        b.iter(|| training::pretrain(black_box(&data), &spec, &mee, &cfg).unwrap())
    });
    c.bench_function("mse_epoch_1000x100_batch128", |b| {
        b.iter(|| training::pretrain(black_box(&data), &spec, &Loss::Mse, &cfg).unwrap())
    });
}

criterion_group!(
    benches,
    bench_kernels,
    bench_entropy,
    bench_hsic,
    bench_training_epoch
);
criterion_main!(benches);
