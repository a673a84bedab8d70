use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kerrfock::dynamics::{
    default_wigner_grid, evolve_closed, evolve_lindblad, LossModel, QuantumState, SimOptions, StaticControls,
};
use kerrfock::fock::fock_state;
use kerrfock::pathopt::{seed_path, TargetSpec};
use kerrfock::penalty::PenaltyEvaluator;
use kerrfock::spectral::eigensystem_at;
use kerrfock::{DriveKind, DrivePoint};

fn spectral(c: &mut Criterion) {
    let pt = DrivePoint { delta: -2.0, beta: 1.5 };
    c.bench_function("eigensystem dim 40", |b| {
        b.iter(|| eigensystem_at(black_box(pt), 40, DriveKind::Linear).unwrap())
    });
    let eval = PenaltyEvaluator::new(40, DriveKind::Linear).unwrap();
    c.bench_function("penalty density dim 40", |b| {
        b.iter(|| eval.density(black_box(pt), (0.6, 0.8)).unwrap())
    });
}

fn path_penalty(c: &mut Criterion) {
    let spec = TargetSpec::new(3);
    let path = seed_path(&spec).unwrap();
    let eval = PenaltyEvaluator::new(spec.dim(), DriveKind::Linear).unwrap();
    let mut group = c.benchmark_group("path");
    group.sample_size(10);
    group.bench_function("seed path penalty n=3", |b| b.iter(|| eval.profile(&path, 4).unwrap().total));
    group.finish();
}

fn dynamics(c: &mut Criterion) {
    let src = StaticControls {
        point: DrivePoint { delta: -1.0, beta: 2.0 },
        duration: 1.0,
        kerr: 1.0,
    };
    let opts = SimOptions::new(1);
    let psi0 = fock_state(0, 40).unwrap();
    let rho0 = psi0.to_density();
    let mut group = c.benchmark_group("dynamics");
    group.sample_size(10);
    group.bench_function("closed dim 40, t = 1", |b| b.iter(|| evolve_closed(&src, &psi0, &opts).unwrap()));
    group.bench_function("lindblad dim 40, t = 1", |b| {
        b.iter(|| evolve_lindblad(&src, &rho0, LossModel::new(1e-3).unwrap(), &opts).unwrap())
    });
    let five = QuantumState::Pure(fock_state(5, 40).unwrap());
    group.bench_function("wigner 61x61 dim 40", |b| b.iter(|| default_wigner_grid(&five, 61).unwrap()));
    group.finish();
}

criterion_group!(benches, spectral, path_penalty, dynamics);
criterion_main!(benches);
