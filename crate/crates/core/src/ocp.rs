//! Direct transcription and numerical solution of the finite-horizon
//! optimal control problem: minimise the integrated stage cost over
//! piecewise-constant inputs subject to the input box and the infection-cap
//! state constraint at the transcription nodes.
//!
//! The state constraint is handled by an augmented Lagrangian, the input box
//! by projection inside a spectral projected-gradient inner loop. Gradients
//! are exact (discrete adjoint of the Euler transcription).

use crate::error::{Error, Result};
use crate::integrate::{SimEvents, Trajectory};
use crate::model::{self, ControlInput, ModelParams, State};

/// Finite-horizon problem data.
#[derive(Debug, Clone, Copy)]
pub struct OcpSpec {
    pub x0: State,
    /// Prediction horizon T, days.
    pub horizon: f64,
    /// Transcription step, days; T/h must be an integer.
    pub h: f64,
    pub params: ModelParams,
}

impl OcpSpec {
    pub fn new(x0: State, horizon: f64, h: f64, params: ModelParams) -> Result<Self> {
        params.validate()?;
        x0.validate()?;
        if !(horizon > 0.0 && h > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need positive horizon and step, got T={horizon}, h={h}"
            )));
        }
        let m = horizon / h;
        if (m - m.round()).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "T/h must be an integer, got T={horizon}, h={h}"
            )));
        }
        Ok(OcpSpec {
            x0,
            horizon,
            h,
            params,
        })
    }

    /// Number of decision input pairs.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    /// Decision vector filled with the nominal input (default cold start).
    pub fn nominal_guess(&self) -> Vec<ControlInput> {
        vec![self.params.u_nom(); self.num_steps()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub u_star: Vec<ControlInput>,
    /// Objective value (penalty-free) at `u_star`.
    pub cost: f64,
    pub traj: Trajectory,
    pub status: SolveStatus,
    /// Projected-gradient norm of the augmented Lagrangian at the solution.
    pub kkt_residual: f64,
    /// Max over nodes of (I_k - I_max)+.
    pub constraint_violation: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Per-outer-iteration log lines when `log_iterations` is enabled.
    pub iteration_log: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Tolerance on the projected-gradient norm.
    pub opt_tol: f64,
    /// Tolerance on the state-constraint violation.
    pub feas_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub log_iterations: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            opt_tol: 1e-8,
            feas_tol: 1e-8,
            penalty_init: 1.0,
            penalty_growth: 10.0,
            max_outer: 14,
            max_inner: 4000,
            log_iterations: false,
        }
    }
}

/// Forward Euler rollout of the transcription (no clamping: the map must be
/// the exact one the adjoint differentiates).
pub fn rollout(x0: &State, u: &[ControlInput], p: &ModelParams, h: f64) -> Vec<State> {
    let mut states = Vec::with_capacity(u.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for uk in u {
        let f = model::rhs_raw(&x, uk, p);
        x = State {
            s: x.s + h * f[0],
            e: x.e + h * f[1],
            i: x.i + h * f[2],
        };
        states.push(x);
    }
    states
}

/// Left-endpoint quadrature of the stage cost along the rollout.
pub fn objective(spec: &OcpSpec, u: &[ControlInput]) -> f64 {
    let states = rollout(&spec.x0, u, &spec.params, spec.h);
    objective_along(spec, &states, u)
}

fn objective_along(spec: &OcpSpec, states: &[State], u: &[ControlInput]) -> f64 {
    u.iter()
        .zip(states)
        .map(|(uk, xk)| model::stage_cost(xk, uk, &spec.params))
        .sum::<f64>()
        * spec.h
}

/// Exact gradient of `objective` composed with `rollout`, via the backward
/// adjoint recursion.
pub fn gradient(spec: &OcpSpec, u: &[ControlInput]) -> Vec<[f64; 2]> {
    let states = rollout(&spec.x0, u, &spec.params, spec.h);
    gradient_merit(spec, &states, u, &[], 0.0).0
}

/// Gradient of the augmented-Lagrangian merit
/// `J(u) + sum_k psi(I_k - I_max; mu_k, rho)` for nodes k = 1..M.
/// Empty multipliers mean "no penalty term" (plain objective gradient).
fn gradient_merit(
    spec: &OcpSpec,
    states: &[State],
    u: &[ControlInput],
    mults: &[f64],
    rho: f64,
) -> (Vec<[f64; 2]>, f64) {
    let p = &spec.params;
    let h = spec.h;
    let m = u.len();
    let mut grad = vec![[0.0; 2]; m];

    // d psi / d c at node k (mults indexed by node-1)
    let active = |k: usize| -> f64 {
        if mults.is_empty() || k == 0 {
            0.0
        } else {
            let c = states[k].i - p.i_max;
            (mults[k - 1] + rho * c).max(0.0)
        }
    };

    // adjoint at terminal node
    let mut adj = [0.0, 0.0, active(m)];
    let mut merit_pen = psi_total(spec, states, mults, rho);
    merit_pen += objective_along(spec, states, u);

    for k in (0..m).rev() {
        let x = &states[k];
        let uk = &u[k];
        // gradient wrt u_k: h * dl/du + h * (df/du)^T adj
        let db = uk.beta - p.beta_nom;
        let dg = uk.gamma - p.gamma_nom;
        let si = x.s * x.i;
        grad[k][0] = h * (2.0 * (1.0 - p.lambda) * db) + h * (-si * adj[0] + si * adj[1]);
        grad[k][1] = h * (2.0 * (1.0 - p.lambda) * dg) + h * (-x.i * adj[2]);

        // adjoint wrt x_k: h * dl/dx + (I + h df/dx)^T adj + penalty at node k
        let a11 = -uk.beta * x.i;
        let a13 = -uk.beta * x.s;
        // df/dx = [[a11, 0, a13], [-a11, -eta, -a13], [0, eta, -gamma]]
        let n0 = adj[0] * (1.0 + h * a11) + adj[1] * (h * -a11);
        let n1 = adj[1] * (1.0 - h * p.eta) + adj[2] * (h * p.eta) + h * 2.0 * p.lambda * x.e;
        let n2 = adj[0] * (h * a13)
            + adj[1] * (h * -a13)
            + adj[2] * (1.0 - h * uk.gamma)
            + h * 2.0 * p.lambda * x.i;
        adj = [n0, n1, n2];
        if k > 0 {
            adj[2] += active(k);
        }
    }
    (grad, merit_pen)
}

fn psi_total(spec: &OcpSpec, states: &[State], mults: &[f64], rho: f64) -> f64 {
    if mults.is_empty() {
        return 0.0;
    }
    let p = &spec.params;
    let mut total = 0.0;
    for (k, x) in states.iter().enumerate().skip(1) {
        let c = x.i - p.i_max;
        let mu = mults[k - 1];
        let shifted = mu + rho * c;
        total += if shifted > 0.0 {
            mu * c + 0.5 * rho * c * c
        } else {
            -0.5 * mu * mu / rho
        };
    }
    total
}

fn merit_value(spec: &OcpSpec, u: &[ControlInput], mults: &[f64], rho: f64) -> f64 {
    let states = rollout(&spec.x0, u, &spec.params, spec.h);
    objective_along(spec, &states, u) + psi_total(spec, &states, mults, rho)
}

fn max_violation(states: &[State], p: &ModelParams) -> f64 {
    states
        .iter()
        .map(|x| (x.i - p.i_max).max(0.0))
        .fold(0.0, f64::max)
}

fn project_all(u: &mut [ControlInput], p: &ModelParams) {
    for uk in u.iter_mut() {
        *uk = uk.project(p);
    }
}

fn pg_norm(u: &[ControlInput], grad: &[[f64; 2]], p: &ModelParams) -> f64 {
    let mut sq = 0.0;
    for (uk, g) in u.iter().zip(grad) {
        let pb = uk.beta - (uk.beta - g[0]).clamp(p.beta_min, p.beta_nom);
        let pc = uk.gamma - (uk.gamma - g[1]).clamp(p.gamma_nom, p.gamma_max);
        sq += pb * pb + pc * pc;
    }
    sq.sqrt()
}

/// Inner spectral projected-gradient loop on the merit function.
/// Returns (iterations used, final pg norm).
fn inner_solve(
    spec: &OcpSpec,
    u: &mut Vec<ControlInput>,
    mults: &[f64],
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> (usize, f64) {
    let p = &spec.params;
    project_all(u, p);
    let states = rollout(&spec.x0, u, p, spec.h);
    let (mut grad, mut merit) = gradient_merit(spec, &states, u, mults, rho);
    let mut alpha = 1.0;
    let sigma = 1e-4;
    // nonmonotone reference values (Grippo-Lampariello-Lucidi, memory 10)
    let mut recent = std::collections::VecDeque::with_capacity(10);
    recent.push_back(merit);

    for iter in 0..max_iter {
        let res = pg_norm(u, &grad, p);
        if res <= tol {
            return (iter, res);
        }
        // projected step direction
        let mut dir = vec![[0.0; 2]; u.len()];
        let mut gd = 0.0;
        for (k, uk) in u.iter().enumerate() {
            let tb = (uk.beta - alpha * grad[k][0]).clamp(p.beta_min, p.beta_nom) - uk.beta;
            let tg = (uk.gamma - alpha * grad[k][1]).clamp(p.gamma_nom, p.gamma_max) - uk.gamma;
            dir[k] = [tb, tg];
            gd += grad[k][0] * tb + grad[k][1] * tg;
        }
        if gd >= 0.0 {
            // not a descent direction: reset the spectral step
            alpha = 1.0;
            continue;
        }
        // backtracking line search on the merit
        let merit_ref = recent.iter().cloned().fold(merit, f64::max);
        let mut t = 1.0;
        let mut candidate: Vec<ControlInput>;
        let mut merit_new;
        loop {
            candidate = u
                .iter()
                .zip(&dir)
                .map(|(uk, d)| ControlInput {
                    beta: uk.beta + t * d[0],
                    gamma: uk.gamma + t * d[1],
                })
                .collect();
            merit_new = merit_value(spec, &candidate, mults, rho);
            if merit_new <= merit_ref + sigma * t * gd || t < 1e-14 {
                break;
            }
            t *= 0.5;
        }
        let states_new = rollout(&spec.x0, &candidate, p, spec.h);
        let (grad_new, _) = gradient_merit(spec, &states_new, &candidate, mults, rho);
        // Barzilai-Borwein step length from (s, y)
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..u.len() {
            let sb = candidate[k].beta - u[k].beta;
            let sg = candidate[k].gamma - u[k].gamma;
            ss += sb * sb + sg * sg;
            sy += sb * (grad_new[k][0] - grad[k][0]) + sg * (grad_new[k][1] - grad[k][1]);
        }
        alpha = if sy > 1e-16 {
            (ss / sy).clamp(1e-8, 1e8)
        } else {
            1e4
        };
        *u = candidate;
        grad = grad_new;
        merit = merit_new;
        if recent.len() == 10 {
            recent.pop_front();
        }
        recent.push_back(merit);
    }
    let res = pg_norm(u, &grad, p);
    (max_iter, res)
}

/// Solve the transcribed problem from an optional warm start.
pub fn solve(spec: &OcpSpec, warm_start: Option<&[ControlInput]>, opts: &SolverOptions) -> Result<OcpSolution> {
    let m = spec.num_steps();
    let mut u: Vec<ControlInput> = match warm_start {
        Some(w) => {
            if w.len() != m {
                return Err(Error::InvalidParams(format!(
                    "warm start has {} inputs, expected {}",
                    w.len(),
                    m
                )));
            }
            w.to_vec()
        }
        None => spec.nominal_guess(),
    };
    let p = &spec.params;
    let mut mults = vec![0.0; m];
    let mut rho = opts.penalty_init;
    let mut status = SolveStatus::MaxIter;
    let mut inner_total = 0;
    let mut outer_used = 0;
    let mut kkt = f64::INFINITY;
    let mut viol_prev = f64::INFINITY;
    let mut log = Vec::new();

    for outer in 0..opts.max_outer {
        outer_used = outer + 1;
        // progressively tighten the inner tolerance
        let tol = (1e-4 * 0.1_f64.powi(outer as i32)).max(opts.opt_tol);
        let (iters, res) = inner_solve(spec, &mut u, &mults, rho, tol, opts.max_inner);
        inner_total += iters;
        kkt = res;
        let states = rollout(&spec.x0, &u, p, spec.h);
        let viol = max_violation(&states, p);
        if opts.log_iterations {
            log.push(format!(
                "outer={outer} rho={rho:.1e} inner_iters={iters} pg_norm={res:.3e} violation={viol:.3e}"
            ));
        }
        if viol <= opts.feas_tol && res <= opts.opt_tol {
            status = SolveStatus::Converged;
            break;
        }
        // multiplier update, then penalty growth when progress stalls
        for (k, x) in states.iter().enumerate().skip(1) {
            mults[k - 1] = (mults[k - 1] + rho * (x.i - p.i_max)).max(0.0);
        }
        if viol > 0.25 * viol_prev && viol > opts.feas_tol {
            rho *= opts.penalty_growth;
        }
        viol_prev = viol;
        if rho > 1e14 {
            status = SolveStatus::Infeasible;
            break;
        }
    }

    let states = rollout(&spec.x0, &u, p, spec.h);
    let viol = max_violation(&states, p);
    if status == SolveStatus::MaxIter && viol > opts.feas_tol.max(1e-6) {
        status = SolveStatus::Infeasible;
    }
    let cost = objective_along(spec, &states, &u);
    let traj = Trajectory {
        times: (0..=m).map(|k| k as f64 * spec.h).collect(),
        cost_samples: u
            .iter()
            .zip(&states)
            .map(|(uk, xk)| model::stage_cost(xk, uk, p))
            .collect(),
        states,
        inputs: u.clone(),
        events: SimEvents::default(),
    };
    Ok(OcpSolution {
        u_star: u,
        cost,
        traj,
        status,
        kkt_residual: kkt,
        constraint_violation: viol,
        inner_iterations: inner_total,
        outer_iterations: outer_used,
        iteration_log: log,
    })
}

/// Finite-horizon value function; +infinity when the solver reports
/// infeasibility.
pub fn value_t(x0: &State, horizon: f64, p: &ModelParams, h: f64, opts: &SolverOptions) -> Result<f64> {
    let spec = OcpSpec::new(*x0, horizon, h, *p)?;
    let sol = solve(&spec, None, opts)?;
    Ok(match sol.status {
        SolveStatus::Infeasible => f64::INFINITY,
        _ => sol.cost,
    })
}

/// Options for the infinite-horizon cost estimate.
#[derive(Debug, Clone, Copy)]
pub struct ValueInfOptions {
    /// Integration step for the nominal tail simulation, days.
    pub h: f64,
    /// Stop once the instantaneous minimal stage cost falls below this.
    pub tail_tol: f64,
    /// Simulation budget, days.
    pub max_days: f64,
}

impl Default for ValueInfOptions {
    fn default() -> Self {
        ValueInfOptions {
            h: 0.25,
            tail_tol: 1e-12,
            max_days: 1_000_000.0,
        }
    }
}

/// Upper bound on the infinite-horizon value function, evaluated along the
/// constructive policy: the staged reach strategy into the invariant box
/// when needed, then the nominal input, with a fitted exponential tail
/// closing the truncated integral.
pub fn value_inf_estimate(x0: &State, p: &ModelParams, opts: &ValueInfOptions) -> Result<f64> {
    x0.validate()?;
    if p.in_xm(x0) {
        return nominal_cost_from(x0, p, opts);
    }
    let (traj, _t_reach) = crate::certify::staged_reach_xm(x0, p, &crate::certify::StagedReachOptions::default())?;
    let head = traj.cost_integral();
    let tail = nominal_cost_from(&traj.final_state(), p, opts)?;
    Ok(head + tail)
}

/// Cost of the nominal policy from a state in the invariant box, truncated
/// when the stage cost drops below `tail_tol` and closed with the tail of a
/// fitted exponential decay.
pub fn nominal_cost_from(x0: &State, p: &ModelParams, opts: &ValueInfOptions) -> Result<f64> {
    let u = p.u_nom();
    let mut x = *x0;
    let mut cost = 0.0;
    let mut l_prev = model::stage_cost_min(&x, p);
    if l_prev < opts.tail_tol {
        return Ok(0.0);
    }
    let steps = (opts.max_days / opts.h).ceil() as usize;
    // samples for the tail fit: (t, log l)
    let mut window: std::collections::VecDeque<(f64, f64)> = std::collections::VecDeque::new();
    let window_len = 512;
    for k in 0..steps {
        x = crate::integrate::step_rk4(&x, &u, opts.h, p);
        let l = model::stage_cost_min(&x, p);
        cost += 0.5 * (l_prev + l) * opts.h;
        l_prev = l;
        if l > 0.0 {
            if window.len() == window_len {
                window.pop_front();
            }
            window.push_back(((k + 1) as f64 * opts.h, l.ln()));
        }
        if l < opts.tail_tol {
            // close the integral with the fitted exponential tail
            let rate = fit_slope(&window).map(|s| -s).unwrap_or(0.0);
            if rate > 0.0 {
                cost += l / rate;
            }
            return Ok(cost);
        }
    }
    Err(Error::BudgetExceeded(format!(
        "stage cost did not fall below {} within {} days of nominal simulation",
        opts.tail_tol, opts.max_days
    )))
}

/// Least-squares slope of y over t.
fn fit_slope(points: &std::collections::VecDeque<(f64, f64)>) -> Option<f64> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (t, y) in points {
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let denom = nf * stt - st * st;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((nf * sty - st * sy) / denom)
}
