//! Benchmarks of the hot paths: gradient precomputation, the pairwise
//! kernel, candidate-matrix aggregation under both backends, and one full
//! estimation pipeline run with fixed settings.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tsdr_core::{
    estimate_cms, generate, j_fmt, m_fmt, Backend, EstimateOptions, GradientProvider, Innovation,
    KdeOptions, Model, SimSpec, TrimConfig, WeightParams,
};

fn series(n: usize) -> tsdr_core::TimeSeries {
    let spec = SimSpec::new(Model::One, n, Innovation::Normal, 42);
    generate(&spec).expect("benchmark path generation").series
}

fn bench_kernel(c: &mut Criterion) {
    let ts = series(300);
    let kde = KdeOptions::default();
    let (embedded, provider) =
        GradientProvider::build(&ts, 3, Backend::Gaussian, &kde).expect("provider");
    let w = WeightParams::new(0.1).expect("weight");
    let z_t = embedded.predictor_row(10);
    let z_s = embedded.predictor_row(12);
    let g_t = provider.conditional_gradient(10, 12).expect("gradient");
    let g_s = provider.marginal_gradient(12);
    let y_t = embedded.responses()[10];
    let y_s = embedded.responses()[12];

    c.bench_function("j_fmt_p3", |b| {
        b.iter(|| {
            j_fmt(
                (black_box(&z_t), y_t),
                (black_box(&z_s), y_s),
                2,
                &w,
                &g_t,
                &g_s,
            )
        })
    });
}

fn bench_m_fmt(c: &mut Criterion) {
    let ts = series(300);
    let w = WeightParams::new(0.1).expect("weight");
    let trim = TrimConfig::None;
    let kde = KdeOptions::default();
    let mut group = c.benchmark_group("m_fmt_n300_p3");
    group.sample_size(10);
    for backend in [Backend::Gaussian, Backend::Kde] {
        let (embedded, provider) =
            GradientProvider::build(&ts, 3, backend, &kde).expect("provider");
        group.bench_with_input(
            BenchmarkId::from_parameter(backend),
            &backend,
            |b, _| {
                b.iter(|| m_fmt(black_box(&embedded), &provider, &w, &trim).expect("m_fmt"))
            },
        );
    }
    group.finish();
}

fn bench_gradients(c: &mut Criterion) {
    let ts = series(300);
    let kde = KdeOptions::default();
    let mut group = c.benchmark_group("gradient_build_n300_p3");
    group.sample_size(10);
    for backend in [Backend::Gaussian, Backend::Kde] {
        group.bench_with_input(
            BenchmarkId::from_parameter(backend),
            &backend,
            |b, &backend| {
                b.iter(|| GradientProvider::build(black_box(&ts), 3, backend, &kde).expect("build"))
            },
        );
    }
    group.finish();
}

fn bench_pipeline(c: &mut Criterion) {
    let ts = series(300);
    let opts = EstimateOptions {
        p: Some(3),
        d: Some(1),
        sigma: Some(0.1),
        ..EstimateOptions::default()
    };
    let mut group = c.benchmark_group("estimate_cms_fixed_n300");
    group.sample_size(10);
    group.bench_function("gaussian_p3_d1", |b| {
        b.iter(|| estimate_cms(black_box(&ts), &opts).expect("estimate"))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_kernel,
    bench_m_fmt,
    bench_gradients,
    bench_pipeline
);
criterion_main!(benches);
