//! End-to-end acceptance checks. Each test prints a single pass/fail line
//! (visible with `--nocapture`) before asserting, so a full run doubles as
//! a certification summary.

use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use seir_mpc_core::certify;
use seir_mpc_core::mpc::{self, MpcConfig, MpcLog, LIFETIME_THRESHOLDS};
use seir_mpc_core::ocp::{self, OcpSpec, SolveStatus, SolverOptions};
use seir_mpc_core::{ControlInput, ControlSignal, Method, ModelParams, State};

fn reference_x0() -> State {
    State::new(0.5, 0.18, 0.01).unwrap()
}

fn params_with_lambda(lambda: f64) -> ModelParams {
    ModelParams {
        lambda,
        ..ModelParams::baseline()
    }
}

const SWEEP_LAMBDAS: [f64; 5] = [0.01, 0.2, 0.5, 0.7, 0.99];

struct SweepRun {
    lambda: f64,
    lifetimes: Vec<f64>,
    max_infectious: f64,
    log: MpcLog,
}

fn sweep() -> &'static Vec<SweepRun> {
    static SWEEP: OnceLock<Vec<SweepRun>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        SWEEP_LAMBDAS
            .iter()
            .map(|&lambda| {
                let cfg = MpcConfig::new(params_with_lambda(lambda), 1.0, 20, 0.25);
                let (traj, log) = mpc::run_mpc(&reference_x0(), &cfg)
                    .unwrap_or_else(|e| panic!("closed loop failed at lambda={lambda}: {e}"));
                let lifetimes = mpc::epidemic_lifetime(&traj, &LIFETIME_THRESHOLDS)
                    .unwrap_or_else(|e| panic!("lifetimes missing at lambda={lambda}: {e}"));
                SweepRun {
                    lambda,
                    lifetimes,
                    max_infectious: traj.max_infectious(),
                    log,
                }
            })
            .collect()
    })
}

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n:2} {name:<28} {} {detail}",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

#[test]
fn a01_lifetime_table_reference() {
    let expected = [196.75, 239.0, 281.25, 323.75];
    let run = sweep().iter().find(|r| r.lambda == 0.5).unwrap();
    let mut pass = true;
    for (got, want) in run.lifetimes.iter().zip(expected) {
        if (got - want).abs() > 0.15 * want {
            pass = false;
        }
    }
    verdict(
        1,
        "lifetime-table-lambda-0.5",
        pass,
        &format!("got {:?}, expected {expected:?} within 15%", run.lifetimes),
    );
}

#[test]
fn a02_lifetime_monotone_in_lambda() {
    let runs = sweep();
    let mut pass = true;
    let mut detail = String::new();
    for pair in runs.windows(2) {
        for j in 0..LIFETIME_THRESHOLDS.len() {
            if pair[1].lifetimes[j] < pair[0].lifetimes[j] {
                pass = false;
                detail = format!(
                    "lifetime decreased from lambda={} to lambda={} at threshold {:e}",
                    pair[0].lambda, pair[1].lambda, LIFETIME_THRESHOLDS[j]
                );
            }
        }
    }
    let expected_high = [612.0, 801.25, 988.0, 1175.0];
    let high = runs.iter().find(|r| r.lambda == 0.99).unwrap();
    for (got, want) in high.lifetimes.iter().zip(expected_high) {
        if (got - want).abs() > 0.20 * want {
            pass = false;
            detail = format!("lambda=0.99 lifetimes {:?} off {expected_high:?}", high.lifetimes);
        }
    }
    if high.lifetimes[0] <= 500.0 {
        pass = false;
        detail = format!("lambda=0.99 lifetime at 1e-5 is {}", high.lifetimes[0]);
    }
    if detail.is_empty() {
        detail = format!("lambda=0.99 lifetimes {:?}", high.lifetimes);
    }
    verdict(2, "lifetime-monotonicity", pass, &detail);
}

#[test]
fn a03_closed_loop_infection_cap() {
    let cap = 0.05 + 1e-8;
    let worst = sweep()
        .iter()
        .map(|r| r.max_infectious)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        3,
        "closed-loop-infection-cap",
        worst <= cap,
        &format!("max I over all runs = {worst:.10}"),
    );
}

#[test]
fn a04_shortest_horizon() {
    let cfg = MpcConfig::new(params_with_lambda(0.5), 1.0, 2, 0.25);
    let result = mpc::run_mpc(&reference_x0(), &cfg);
    let (pass, detail) = match &result {
        Ok((_, log)) => {
            let all_feasible = log.records.iter().all(|r| {
                r.solver_status == SolveStatus::Converged
                    && r.constraint_violation <= cfg.solver.feas_tol
            });
            (
                log.terminated && all_feasible,
                format!(
                    "terminated = {}, iterations = {}, all solves feasible = {all_feasible}",
                    log.terminated,
                    log.records.len()
                ),
            )
        }
        Err(e) => (false, format!("{e}")),
    };
    verdict(4, "shortest-horizon-T2", pass, &detail);
}

#[test]
fn a05_relaxed_lyapunov_decrease() {
    let run = sweep().iter().find(|r| r.lambda == 0.5).unwrap();
    let alpha_max = certify::lyapunov_monitor(&run.log).unwrap();
    verdict(
        5,
        "relaxed-lyapunov-decrease",
        alpha_max < 1.0,
        &format!("alpha_max = {alpha_max:.6}"),
    );
}

#[test]
fn a06_xm_invariance() {
    let p = ModelParams::baseline();
    let report = certify::check_xm_invariance(&p, 1000, 300.0, 20260823).unwrap();
    let mesh_max = certify::lie_boundary_mesh_max(&p, 40);
    let pass = report.pass && mesh_max <= 1e-12;
    verdict(
        6,
        "xm-robust-invariance",
        pass,
        &format!(
            "worst trajectory margin = {:.3e}, boundary mesh max = {mesh_max:.3e}",
            report.worst_margin
        ),
    );
}

#[test]
fn a07_short_horizon_lower_bound() {
    let p = ModelParams::baseline();
    let a3 = certify::check_a3(
        &p,
        20.0,
        200,
        &[0.25, 1.0, 5.0, 20.0],
        0.25,
        7,
        &SolverOptions::default(),
    )
    .unwrap();
    verdict(
        7,
        "value-lower-bound",
        a3.report.pass,
        &format!(
            "C = {:.4e}, worst margin = {:.3e}, short-horizon infeasible (excluded) = {}",
            a3.c_bar, a3.report.worst_margin, a3.excluded
        ),
    );
}

#[test]
fn a08_cost_controllability() {
    let p = ModelParams::baseline();
    let cc = certify::cost_controllability(&p, 200, 8).unwrap();
    let mut pass = cc.rho_emp.is_finite();
    // per-sample closed-form bound on the nominal infinite-horizon cost
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst_margin = f64::INFINITY;
    for _ in 0..200 {
        let x0 = certify::sample_xm(&mut rng, &p);
        let b = certify::uniform_bound_c(&x0, &p).unwrap();
        worst_margin = worst_margin.min(b.c - b.j_numeric);
    }
    if worst_margin < -1e-8 {
        pass = false;
    }
    verdict(
        8,
        "cost-controllability",
        pass,
        &format!(
            "rho_emp = {:.4e} (envelope bound {:.4e}), worst nominal-bound margin = {worst_margin:.3e}",
            cc.rho_emp, cc.rho_bound
        ),
    );
}

#[test]
fn a09_gradient_matches_finite_differences() {
    let p = ModelParams::baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_rel = 0.0f64;
    for _ in 0..50 {
        let x0 = certify::sample_x(&mut rng, &p);
        let m = rng.gen_range(2..=20usize);
        let horizon = m as f64 * 0.25;
        let spec = OcpSpec::new(x0, horizon, 0.25, p).unwrap();
        let u: Vec<ControlInput> = (0..m)
            .map(|_| ControlInput {
                beta: rng.gen_range(p.beta_min..=p.beta_nom),
                gamma: rng.gen_range(p.gamma_nom..=p.gamma_max),
            })
            .collect();
        let grad = ocp::gradient(&spec, &u);
        let eps = 1e-6;
        let mut fd_sq = 0.0;
        let mut err_sq = 0.0;
        for k in 0..m {
            for c in 0..2 {
                let mut up = u.clone();
                let mut dn = u.clone();
                match c {
                    0 => {
                        up[k].beta += eps;
                        dn[k].beta -= eps;
                    }
                    _ => {
                        up[k].gamma += eps;
                        dn[k].gamma -= eps;
                    }
                }
                let fd = (ocp::objective(&spec, &up) - ocp::objective(&spec, &dn)) / (2.0 * eps);
                fd_sq += fd * fd;
                let d = grad[k][c] - fd;
                err_sq += d * d;
            }
        }
        worst_rel = worst_rel.max((err_sq / fd_sq.max(1e-30)).sqrt());
    }
    verdict(
        9,
        "adjoint-gradient-check",
        worst_rel <= 1e-5,
        &format!("worst relative error = {worst_rel:.3e} over 50 instances"),
    );
}

#[test]
fn a10_integrator_consistency() {
    let p = ModelParams::baseline();
    let x0 = reference_x0();
    let signal = ControlSignal::Constant(p.u_nom());
    let euler =
        seir_mpc_core::integrate::simulate(&x0, &signal, 300.0, 0.25, Method::Euler, &p).unwrap();
    let rk4 =
        seir_mpc_core::integrate::simulate(&x0, &signal, 300.0, 0.25, Method::Rk4, &p).unwrap();
    let gap = euler.sup_norm_gap(&rk4);
    let fine =
        seir_mpc_core::integrate::simulate(&x0, &signal, 100.0, 0.001, Method::Rk4, &p).unwrap();
    let coarse =
        seir_mpc_core::integrate::simulate(&x0, &signal, 100.0, 0.25, Method::Rk4, &p).unwrap();
    let self_gap = coarse.sup_norm_gap(&fine);
    let pass = gap <= 1e-2 && self_gap <= 1e-6;
    verdict(
        10,
        "integrator-consistency",
        pass,
        &format!("Euler/RK4 gap = {gap:.3e}, RK4 self-convergence gap = {self_gap:.3e}"),
    );
}

#[test]
fn a11_tiny_instance_solver_oracle() {
    let p = ModelParams::baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = 5usize;
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..20 {
        let x0 = certify::sample_x(&mut rng, &p);
        let m = rng.gen_range(1..=3usize);
        let spec = OcpSpec::new(x0, m as f64 * 0.25, 0.25, p).unwrap();
        let sol = ocp::solve(&spec, None, &SolverOptions::default()).unwrap();
        if sol.status != SolveStatus::Converged {
            continue;
        }

        // exhaustive search over a uniform lattice in the input box,
        // restricted to policies respecting the infection cap
        let level = |j: usize, lo: f64, hi: f64| lo + (hi - lo) * j as f64 / (grid - 1) as f64;
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; 2 * m];
        loop {
            let u: Vec<ControlInput> = (0..m)
                .map(|k| ControlInput {
                    beta: level(idx[2 * k], p.beta_min, p.beta_nom),
                    gamma: level(idx[2 * k + 1], p.gamma_nom, p.gamma_max),
                })
                .collect();
            let states = ocp::rollout(&x0, &u, &p, 0.25);
            let feasible = states[1..].iter().all(|x| x.i <= p.i_max + 1e-12);
            if feasible {
                best = best.min(ocp::objective(&spec, &u));
            }
            let mut carry = 0usize;
            loop {
                idx[carry] += 1;
                if idx[carry] < grid {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == idx.len() {
                    break;
                }
            }
            if carry == idx.len() {
                break;
            }
        }
        if best.is_finite() {
            worst_excess = worst_excess.max(sol.cost - best);
        }
    }
    verdict(
        11,
        "tiny-instance-oracle",
        worst_excess <= 1e-6,
        &format!("worst cost excess over lattice best = {worst_excess:.3e}"),
    );
}
