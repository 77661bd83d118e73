use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use featrec::simbench::{generate, Scenario};
use featrec::{fit_loess, fit_recommender, fit_sir, marginal_pvalues, FitConfig, SliceSpec};
use featrec_bench::single_index;

fn bench_sir(c: &mut Criterion) {
    let mut group = c.benchmark_group("sir_fit");
    for &n in &[200usize, 400, 1600] {
        let (x, y) = single_index(n, 8, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                fit_sir(
                    black_box(x.view()),
                    black_box(&y),
                    1,
                    &SliceSpec::EqualCount(10),
                )
            })
        });
    }
    group.finish();
}

fn bench_loess(c: &mut Criterion) {
    let mut group = c.benchmark_group("loess");
    let (x, y) = single_index(400, 1, 2);
    let model = fit_loess(x, y, 0.75, 1).unwrap();
    group.bench_function("predict", |b| {
        b.iter(|| model.predict(black_box(&[0.3])).unwrap())
    });
    group.bench_function("curve_100", |b| {
        b.iter(|| model.curve(black_box(100)).unwrap())
    });
    group.finish();
}

fn bench_screening(c: &mut Criterion) {
    let d = generate(&Scenario::new(2).unwrap(), 400, 100, 3).unwrap();
    c.bench_function("marginal_pvalues_400x100", |b| {
        b.iter(|| marginal_pvalues(black_box(&d)).unwrap())
    });
}

fn bench_fit_recommender(c: &mut Criterion) {
    let d = generate(&Scenario::new(3).unwrap(), 400, 8, 4).unwrap();
    let cfg = FitConfig::default();
    c.bench_function("fit_recommender_400x8", |b| {
        b.iter(|| fit_recommender(black_box(&d), black_box(&cfg)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_sir,
    bench_loess,
    bench_screening,
    bench_fit_recommender
);
criterion_main!(benches);
