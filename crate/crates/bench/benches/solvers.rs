//! Benchmarks for the numerical hot paths: pseudoinverse, the two-stage
//! minimal-norm solve, the end-to-end linear fit, and the monomial-lift
//! nonlinear fit.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use linsub_core::linear::fit_inverse_model;
use linsub_core::model::DistractorSpec;
use linsub_core::nonlinear::{fit_nonlinear, FeatureMap, OptimizerConfig};
use linsub_core::numerics::{pinv, two_stage_min_norm, DEFAULT_RANK_TOL};
use linsub_core::rng::{gaussian_matrix, stream};
use linsub_core::simulator::{
    random_system, random_warped_system, sample_batch, sample_warped_batch, GenerationConfig,
};

fn config(d: usize, r: usize, l: usize, seed: u64) -> GenerationConfig {
    GenerationConfig {
        d,
        r,
        l,
        seed,
        a_spectral_norm_target: 0.9,
        distractor: DistractorSpec::IndependentGaussian { scale: 1.0 },
        noise_sigma: 0.0,
    }
}

fn bench_pinv(c: &mut Criterion) {
    let mut group = c.benchmark_group("pinv");
    for &(rows, cols, rank) in &[(50usize, 30usize, 30usize), (200, 100, 40), (400, 200, 80)] {
        let mut rng = stream(1, &[rows as u64, cols as u64]);
        let m = gaussian_matrix(rows, rank, &mut rng) * gaussian_matrix(rank, cols, &mut rng);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{rows}x{cols}_rank{rank}")),
            &m,
            |b, m| b.iter(|| pinv(m, DEFAULT_RANK_TOL)),
        );
    }
    group.finish();
}

fn bench_two_stage(c: &mut Criterion) {
    let mut group = c.benchmark_group("two_stage_min_norm");
    for &n in &[150usize, 600] {
        let mut rng = stream(2, &[n as u64]);
        let base = gaussian_matrix(n, 10, &mut rng);
        let a_x = &base * gaussian_matrix(10, 20, &mut rng);
        let a_y = &base * gaussian_matrix(10, 108, &mut rng);
        let targets = gaussian_matrix(n, 2, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| two_stage_min_norm(&a_x, &a_y, &targets))
        });
    }
    group.finish();
}

fn bench_linear_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_inverse_model");
    for &(d, r, l, n) in &[(20usize, 5usize, 2usize, 150usize), (40, 8, 3, 320)] {
        let sys = random_system(&config(d, r, l, 3)).unwrap().system;
        let ds = sample_batch(&sys, n, r, 5);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("d{d}_r{r}_l{l}_n{n}")),
            &ds,
            |b, ds| b.iter(|| fit_inverse_model(ds, r, DEFAULT_RANK_TOL).unwrap()),
        );
    }
    group.finish();
}

fn bench_nonlinear_fit(c: &mut Criterion) {
    let sys = random_warped_system(3, 1, 11, 0.9).unwrap();
    let ds = sample_warped_batch(&sys, 500, 4, 13);
    let map = FeatureMap::Monomials {
        input_dim: 3,
        degree: 3,
    };
    c.bench_function("fit_nonlinear_monomials_d3_tau4_n500", |b| {
        b.iter(|| fit_nonlinear(&ds, &map, 4, &OptimizerConfig::default()).unwrap())
    });
}

criterion_group!(
    benches,
    bench_pinv,
    bench_two_stage,
    bench_linear_fit,
    bench_nonlinear_fit
);
criterion_main!(benches);
