//! Surrogate-model scaling: Cholesky fit and posterior prediction as the
//! training set grows. Fitting is cubic in the number of observations and
//! prediction quadratic, which caps practical per-step cost and motivates
//! the budget-bounded runs used throughout the harness.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rembo::gp::{self, Dataset};
use rembo::rng::rng_from_seed;
use rembo::{KernelSpec, LengthScale};

const DIM: usize = 2;
const JITTER: f64 = 1e-6;

fn training_data(n: usize) -> Dataset {
    let mut rng = rng_from_seed(99);
    let mut data = Dataset::default();
    for _ in 0..n {
        let x: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (3.0 * x[0]).sin() + x[1] * x[1];
        data.push(x, y).unwrap();
    }
    data
}

fn kernel() -> KernelSpec {
    KernelSpec::low_dim_se(LengthScale::new(0.5).unwrap())
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_fit");
    for n in [32usize, 64, 128, 256] {
        let data = training_data(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| gp::fit(black_box(data), &kernel(), JITTER).unwrap())
        });
    }
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_predict");
    for n in [32usize, 64, 128, 256] {
        let model = gp::fit(&training_data(n), &kernel(), JITTER).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &model, |b, model| {
            b.iter(|| model.predict(black_box(&[0.2, -0.4])).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit, bench_predict);
criterion_main!(benches);
