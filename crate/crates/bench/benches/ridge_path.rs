//! Costs of the solver factorization, per-penalty fits across a grid, and
//! one-shot tuning.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sdridge_core::dataset::Dataset;
use sdridge_core::linalg::log_grid;
use sdridge_core::ridge::RidgeSolver;
use sdridge_core::tuning::one_shot_with_solver;

fn dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal)) / (p as f64).sqrt();
    let y = &x * &beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::new(x, y).unwrap()
}

fn bench_factorize(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver_factorize");
    for &(n, p) in &[(400usize, 200usize), (200, 400), (1000, 500)] {
        let data = dataset(n, p, 1);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{p}")), &data, |b, d| {
            b.iter(|| RidgeSolver::new(d).unwrap())
        });
    }
    group.finish();
}

fn bench_grid_fit(c: &mut Criterion) {
    let data = dataset(400, 200, 2);
    let solver = RidgeSolver::new(&data).unwrap();
    let grid = log_grid(1e-2, 1e2, 40);
    c.bench_function("fit_40_point_grid_400x200", |b| {
        b.iter(|| {
            for &lambda in &grid {
                let fit = solver.fit(lambda).unwrap();
                let _ = solver.pd_refit(&fit).unwrap();
            }
        })
    });
}

fn bench_one_shot(c: &mut Criterion) {
    let data = dataset(400, 200, 3);
    let solver = RidgeSolver::new(&data).unwrap();
    c.bench_function("one_shot_400x200", |b| {
        b.iter(|| one_shot_with_solver(&data, &solver, 1.0, 0.0).unwrap())
    });
}

criterion_group!(benches, bench_factorize, bench_grid_fit, bench_one_shot);
criterion_main!(benches);
