use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use seir_mpc_core::mpc::{self, MpcConfig};
use seir_mpc_core::ocp::{self, OcpSpec, SolverOptions};
use seir_mpc_core::{integrate, model, ModelParams, State};

fn reference() -> (ModelParams, State) {
    (ModelParams::baseline(), State::new(0.5, 0.18, 0.01).unwrap())
}

fn bench_rhs_and_steps(c: &mut Criterion) {
    let (p, x) = reference();
    let u = p.u_nom();
    c.bench_function("rhs", |b| {
        b.iter(|| model::rhs_raw(black_box(&x), black_box(&u), &p))
    });
    c.bench_function("euler_step", |b| {
        b.iter(|| integrate::step_euler(black_box(&x), &u, 0.25, &p))
    });
    c.bench_function("rk4_step", |b| {
        b.iter(|| integrate::step_rk4(black_box(&x), &u, 0.25, &p))
    });
}

fn bench_rollout_and_gradient(c: &mut Criterion) {
    let (p, x) = reference();
    let spec = OcpSpec::new(x, 20.0, 0.25, p).unwrap();
    let u = spec.nominal_guess();
    c.bench_function("rollout_T20", |b| {
        b.iter(|| ocp::rollout(black_box(&x), &u, &p, 0.25))
    });
    c.bench_function("gradient_T20", |b| {
        b.iter(|| ocp::gradient(&spec, black_box(&u)))
    });
}

fn bench_solve(c: &mut Criterion) {
    let (p, x) = reference();
    let spec = OcpSpec::new(x, 20.0, 0.25, p).unwrap();
    let opts = SolverOptions::default();
    c.bench_function("ocp_solve_T20_cold", |b| {
        b.iter(|| ocp::solve(black_box(&spec), None, &opts).unwrap())
    });
}

fn bench_mpc_iteration(c: &mut Criterion) {
    let (p, x) = reference();
    let cfg = MpcConfig::new(p, 1.0, 20, 0.25);
    let warm = OcpSpec::new(x, cfg.horizon(), cfg.h, p).unwrap().nominal_guess();
    c.bench_function("mpc_feedback_T20_warm", |b| {
        b.iter(|| mpc::mpc_feedback(black_box(&x), &cfg, Some(&warm)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_rhs_and_steps,
    bench_rollout_and_gradient,
    bench_solve,
    bench_mpc_iteration
);
criterion_main!(benches);
