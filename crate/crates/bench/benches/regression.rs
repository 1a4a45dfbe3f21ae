use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use discrim_core::stats::{fit_negbin, stepwise_backward};
use std::hint::black_box;

fn negbin(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_negbin");
    for n in [100usize, 1000, 5000] {
        let d = discrim_bench::count_design(n, 12, 11);
        g.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| b.iter(|| fit_negbin(black_box(d)).unwrap()));
    }
    g.finish();
}

fn stepwise(c: &mut Criterion) {
    // city-scale: a hundred rows, a dozen covariates
    let d = discrim_bench::count_design(100, 12, 12);
    let mut g = c.benchmark_group("stepwise_backward");
    g.sample_size(10);
    g.bench_function("100x12", |b| b.iter(|| stepwise_backward(black_box(&d)).unwrap()));
    g.finish();
}

criterion_group!(benches, negbin, stepwise);
criterion_main!(benches);
