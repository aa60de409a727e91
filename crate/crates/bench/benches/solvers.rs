use criterion::{criterion_group, criterion_main, Criterion};
use paydist_bench::{class_one, class_two, market_grid};
use paydist_core::dynamics::{integrate_to_equilibrium, MeanField, RevisionProtocol};
use paydist_core::equilibrium::{
    bipop_equilibrium, lognormal_equilibrium, maximize_potential, AscentOptions,
};
use paydist_core::{LevelGame, PopulationState};
use std::hint::black_box;

fn solvers(c: &mut Criterion) {
    let grid = market_grid();
    let p1 = class_one();
    let p2 = class_two();
    let game = LevelGame::pay(&grid, &p1);

    c.bench_function("lognormal_closed_form", |b| {
        b.iter(|| lognormal_equilibrium(black_box(&grid), &p1).unwrap())
    });
    c.bench_function("bipop_partition", |b| {
        b.iter(|| bipop_equilibrium(black_box(&grid), (p1, 950_000), (p2, 50_000)).unwrap())
    });
    c.bench_function("mirror_ascent", |b| {
        b.iter(|| maximize_potential(black_box(&game), &AscentOptions::default()).unwrap())
    });
    let field = MeanField::single(game.clone());
    let start = PopulationState::from_level_shares(vec![0.01; 100], 1e6).unwrap();
    c.bench_function("replicator_to_equilibrium", |b| {
        b.iter(|| {
            integrate_to_equilibrium(black_box(&start), &field, &RevisionProtocol::default(), 1e-10, 100_000)
                .unwrap()
        })
    });
}

criterion_group!(benches, solvers);
criterion_main!(benches);
