use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use heatchain_core::fluct::{h_matrix, ness_gaussian};
use heatchain_core::jump::{simulate_with, step, SimOptions};
use heatchain_core::linalg::lyapunov_solve;
use heatchain_core::ode::{drift_jacobian, integrate_ode, solve_equilibrium};
use heatchain_core::rng::ChainRng;
use heatchain_core::{ChainConfig, EnergyState, RateKind};

fn cfg(n: usize, m: u64) -> ChainConfig {
    ChainConfig::new(n, m, 1.0, 2.0, RateKind::SqrtProduct).unwrap()
}

fn jump(c: &mut Criterion) {
    let c5 = cfg(5, 1000);
    let e0 = EnergyState::uniform(5, 1.5).unwrap();
    c.bench_function("step/n5", |b| {
        let mut rng = ChainRng::from_seed(1);
        b.iter_batched(
            || e0.clone(),
            |s| step(&s, &c5, 0.0, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let opts = SimOptions {
        event_cap: 0,
        snapshot_times: Vec::new(),
    };
    c.bench_function("simulate/n5_m1000_t1", |b| {
        b.iter(|| simulate_with(&c5, &e0, 1.0, black_box(7), &opts).unwrap().n_events)
    });
}

fn limits(c: &mut Criterion) {
    for n in [10, 50] {
        let cn = cfg(n, 1000);
        c.bench_function(&format!("equilibrium/n{n}"), |b| {
            b.iter(|| solve_equilibrium(black_box(&cn), 1e-12).unwrap().c_star)
        });
    }
    let c10 = cfg(10, 1000);
    let e0 = EnergyState::uniform(10, 1.0).unwrap();
    c.bench_function("ode/n10_t5_dt0.01", |b| {
        b.iter(|| integrate_ode(&c10, black_box(&e0), 5.0, 0.01).unwrap().final_state()[0])
    });
}

fn lyapunov(c: &mut Criterion) {
    for n in [10, 30] {
        let cn = cfg(n, 1000);
        let e = solve_equilibrium(&cn, 1e-12).unwrap().e_star;
        let j = drift_jacobian(e.as_slice(), &cn);
        let q = h_matrix(&e, &cn).unwrap().gram();
        c.bench_function(&format!("lyapunov_solve/n{n}"), |b| {
            b.iter(|| lyapunov_solve(black_box(&j), black_box(&q)).unwrap()[(0, 0)])
        });
    }
    let c10 = cfg(10, 1000);
    c.bench_function("ness_gaussian/n10", |b| {
        b.iter(|| ness_gaussian(black_box(&c10), 1e-12).unwrap().residual)
    });
}

criterion_group!(benches, jump, limits, lyapunov);
criterion_main!(benches);
