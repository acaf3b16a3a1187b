//! Numerical certification of the analysis backing the scheme: invariance
//! of the box X_M, uniform cost bounds along the nominal policy, empirical
//! exponential decay and cost controllability, the Gronwall-type inequality
//! linking short-horizon values to the instantaneous cost, the constructive
//! staged strategy reaching X_M, and the relaxed Lyapunov decrease of the
//! closed loop.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::integrate::{self, Trajectory};
use crate::model::{self, ControlInput, ModelParams, State};
use crate::mpc::MpcLog;
use crate::ocp::{self, SolverOptions};

/// Empirical exponential-decay envelope for the infected compartments
/// under the nominal input on X_M.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// Overshoot constant of the envelope, >= 1.
    pub gamma: f64,
    /// Decay exponent, 1/day.
    pub rate: f64,
    /// Root-mean-square residual of the log-linear tail fits.
    pub fit_rmse: f64,
}

/// Outcome of one certification check. Margins are oriented so that
/// nonnegative means satisfied.
#[derive(Debug, Clone)]
pub struct CertReport {
    pub name: String,
    pub samples: usize,
    pub worst_margin: f64,
    pub pass: bool,
    pub details: Vec<String>,
}

impl CertReport {
    fn from_margin(name: &str, samples: usize, worst_margin: f64, tol: f64) -> Self {
        CertReport {
            name: name.to_string(),
            samples,
            worst_margin,
            pass: worst_margin >= -tol,
            details: Vec::new(),
        }
    }
}

/// Uniform sample from the box X_M (the box bounds all lie inside the
/// simplex for sensible parameters; rejection keeps the general case safe).
pub fn sample_xm(rng: &mut impl Rng, p: &ModelParams) -> State {
    let b = p.bounds();
    loop {
        let x = State {
            s: rng.gen_range(0.0..b.xbar1),
            e: rng.gen_range(0.0..b.xbar2),
            i: rng.gen_range(0.0..p.i_max),
        };
        if x.s + x.e + x.i <= 1.0 {
            return x;
        }
    }
}

/// Uniform sample from the constraint set X.
pub fn sample_x(rng: &mut impl Rng, p: &ModelParams) -> State {
    loop {
        let x = State {
            s: rng.gen_range(0.0..1.0),
            e: rng.gen_range(0.0..1.0),
            i: rng.gen_range(0.0..p.i_max),
        };
        if x.s + x.e + x.i <= 1.0 {
            return x;
        }
    }
}

/// Lie derivatives of the active box constraints of X_M at a boundary
/// state: g1 = S - xbar1, g2 = E - xbar2, g3 = I - I_max.
pub fn lie_derivatives_on_xm_boundary(
    x: &State,
    u: &ControlInput,
    p: &ModelParams,
    active_tol: f64,
) -> Result<Vec<(usize, f64)>> {
    let b = p.bounds();
    let f = model::rhs_raw(x, u, p);
    let mut out = Vec::new();
    if (x.s - b.xbar1).abs() <= active_tol {
        out.push((1, f[0]));
    }
    if (x.e - b.xbar2).abs() <= active_tol {
        out.push((2, f[1]));
    }
    if (x.i - p.i_max).abs() <= active_tol {
        out.push((3, f[2]));
    }
    if out.is_empty() {
        return Err(Error::NoActiveConstraint(*x));
    }
    Ok(out)
}

/// Check that no trajectory starting in X_M leaves it, both under the
/// nominal input and under randomized admissible inputs.
pub fn check_xm_invariance(
    p: &ModelParams,
    n_samples: usize,
    horizon_days: f64,
    seed: u64,
) -> Result<CertReport> {
    if n_samples < 1 {
        return Err(Error::InvalidParams("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 0.25;
    let steps = (horizon_days / h).ceil() as usize;
    let resample_every = 20; // new random admissible input every 5 days
    let mut worst = f64::INFINITY;
    let mut details = Vec::new();

    for sample in 0..n_samples {
        let x0 = sample_xm(&mut rng, p);
        for law in 0..2 {
            let mut x = x0;
            let mut u = p.u_nom();
            for k in 0..steps {
                if law == 1 && k % resample_every == 0 {
                    u = ControlInput {
                        beta: rng.gen_range(p.beta_min..=p.beta_nom),
                        gamma: rng.gen_range(p.gamma_nom..=p.gamma_max),
                    };
                }
                x = integrate::step_euler(&x, &u, h, p);
                let m = p.xm_margin(&x);
                if m < worst {
                    worst = m;
                }
                if m < -1e-9 && details.len() < 8 {
                    details.push(format!(
                        "sample {sample} law {law} left X_M at t = {} (margin {m:.3e})",
                        (k + 1) as f64 * h
                    ));
                }
            }
        }
    }
    let mut report = CertReport::from_margin("xm-invariance", n_samples, worst, 1e-9);
    report.details = details;
    Ok(report)
}

/// Max over a boundary mesh of the active Lie derivatives with the nominal
/// input; invariance of X_M requires this to be nonpositive.
pub fn lie_boundary_mesh_max(p: &ModelParams, per_face: usize) -> f64 {
    let b = p.bounds();
    let u = p.u_nom();
    let mut worst = f64::NEG_INFINITY;
    let grid = |n: usize, hi: f64| (0..=n).map(move |j| j as f64 / n as f64 * hi);
    // face S = xbar1
    for e in grid(per_face, b.xbar2) {
        for i in grid(per_face, p.i_max) {
            let x = State { s: b.xbar1, e, i };
            for (_, l) in lie_derivatives_on_xm_boundary(&x, &u, p, 1e-12).unwrap() {
                worst = worst.max(l);
            }
        }
    }
    // face E = xbar2
    for s in grid(per_face, b.xbar1) {
        for i in grid(per_face, p.i_max) {
            let x = State { s, e: b.xbar2, i };
            for (_, l) in lie_derivatives_on_xm_boundary(&x, &u, p, 1e-12).unwrap() {
                worst = worst.max(l);
            }
        }
    }
    // face I = I_max
    for s in grid(per_face, b.xbar1) {
        for e in grid(per_face, b.xbar2) {
            let x = State { s, e, i: p.i_max };
            for (_, l) in lie_derivatives_on_xm_boundary(&x, &u, p, 1e-12).unwrap() {
                worst = worst.max(l);
            }
        }
    }
    worst
}

/// The closed-form uniform bound on the nominal infinite-horizon cost from
/// a state in X_M, together with the numerically truncated cost it bounds.
#[derive(Debug, Clone, Copy)]
pub struct UniformCostBound {
    /// C = lambda * ((1/eta) (S0 - S_inf + E0) + (1/gamma_nom) (S0 - S_inf + E0 + I0)).
    pub c: f64,
    /// Truncated numerical integral of the nominal running cost.
    pub j_numeric: f64,
    /// Limit of the susceptible fraction along the nominal trajectory.
    pub s_inf: f64,
}

pub fn uniform_bound_c(x0: &State, p: &ModelParams) -> Result<UniformCostBound> {
    x0.validate()?;
    if !p.in_xm(x0) {
        return Err(Error::Domain(format!(
            "({}, {}, {}) is not in X_M",
            x0.s, x0.e, x0.i
        )));
    }
    let opts = ocp::ValueInfOptions::default();
    let u = p.u_nom();
    let mut x = *x0;
    let mut j = 0.0;
    let mut l_prev = model::stage_cost_min(&x, p);
    let steps = (opts.max_days / opts.h).ceil() as usize;
    let mut done = l_prev < opts.tail_tol;
    for _ in 0..steps {
        if done {
            break;
        }
        x = integrate::step_rk4(&x, &u, opts.h, p);
        let l = model::stage_cost_min(&x, p);
        j += 0.5 * (l_prev + l) * opts.h;
        l_prev = l;
        done = l < opts.tail_tol;
    }
    if !done {
        return Err(Error::BudgetExceeded(
            "nominal trajectory did not settle within the simulation budget".into(),
        ));
    }
    let s_inf = x.s;
    let d = x0.s - s_inf;
    let c = p.lambda * ((d + x0.e) / p.eta + (d + x0.e + x0.i) / p.gamma_nom);
    Ok(UniformCostBound { c, j_numeric: j, s_inf })
}

/// Fit an exponential envelope |(E, I)(t)| <= Gamma e^{-rate t} |(E, I)(0)|
/// valid for all sampled nominal trajectories from X_M.
pub fn estimate_decay(p: &ModelParams, n_samples: usize, seed: u64) -> Result<DecayFit> {
    if n_samples < 10 {
        return Err(Error::InvalidParams(
            "decay fit needs at least 10 samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 0.25;
    let sim_days = 2000.0;
    let steps = (sim_days / h) as usize;
    let u = p.u_nom();

    let mut series: Vec<Vec<f64>> = Vec::new(); // infection norms per sample
    for _ in 0..n_samples {
        let x0 = sample_xm(&mut rng, p);
        if x0.infection_norm() < 1e-14 {
            continue; // equilibrium samples contribute trivially
        }
        let mut x = x0;
        let mut norms = Vec::with_capacity(steps + 1);
        norms.push(x.infection_norm());
        for _ in 0..steps {
            x = integrate::step_rk4(&x, &u, h, p);
            let n = x.infection_norm();
            if n < 1e-280 {
                break;
            }
            norms.push(n);
        }
        series.push(norms);
    }
    if series.is_empty() {
        return Err(Error::FitFailure("all samples were equilibria".into()));
    }

    // slope of log|z| on the tail half of each sample
    let mut rate = f64::INFINITY;
    let mut sq_res = 0.0;
    let mut n_res = 0usize;
    for norms in &series {
        let start = norms.len() / 2;
        let pts: Vec<(f64, f64)> = norms[start..]
            .iter()
            .enumerate()
            .map(|(j, n)| ((start + j) as f64 * h, n.ln()))
            .collect();
        let (slope, intercept) = least_squares(&pts)
            .ok_or_else(|| Error::FitFailure("degenerate tail".into()))?;
        if !slope.is_finite() || slope >= 0.0 {
            return Err(Error::FitFailure(format!(
                "nonnegative tail slope {slope}"
            )));
        }
        rate = rate.min(-slope);
        for (t, y) in &pts {
            let r = y - (intercept + slope * t);
            sq_res += r * r;
            n_res += 1;
        }
    }

    // smallest overshoot constant making the envelope valid on every grid
    let mut gamma: f64 = 1.0;
    for norms in &series {
        let z0 = norms[0];
        for (k, n) in norms.iter().enumerate() {
            let t = k as f64 * h;
            gamma = gamma.max(n * (rate * t).exp() / z0);
        }
    }
    Ok(DecayFit {
        gamma,
        rate,
        fit_rmse: (sq_res / n_res.max(1) as f64).sqrt(),
    })
}

fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (t, y) in pts {
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let denom = n * stt - st * st;
    if denom.abs() < 1e-30 {
        return None;
    }
    let slope = (n * sty - st * sy) / denom;
    Some((slope, (sy - slope * st) / n))
}

/// Empirical cost controllability over X_M: the worst ratio of the
/// infinite-horizon cost estimate to the instantaneous minimal stage cost,
/// compared against the bound implied by the fitted decay envelope.
#[derive(Debug, Clone)]
pub struct CostControllability {
    pub report: CertReport,
    pub rho_emp: f64,
    pub rho_bound: f64,
    pub fit: DecayFit,
}

pub fn cost_controllability(
    p: &ModelParams,
    n_samples: usize,
    seed: u64,
) -> Result<CostControllability> {
    let fit = estimate_decay(p, n_samples.clamp(10, 60), seed ^ 0x5eed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = ocp::ValueInfOptions::default();
    let mut rho_emp: f64 = 0.0;
    let mut evaluated = 0usize;
    let mut details = Vec::new();
    while evaluated < n_samples {
        let x0 = sample_xm(&mut rng, p);
        let lstar = model::stage_cost_min(&x0, p);
        if lstar < 1e-14 {
            continue;
        }
        let v = ocp::value_inf_estimate(&x0, p, &opts)?;
        let ratio = v / lstar;
        if !ratio.is_finite() {
            details.push(format!(
                "non-finite ratio at ({}, {}, {})",
                x0.s, x0.e, x0.i
            ));
        }
        rho_emp = rho_emp.max(ratio);
        evaluated += 1;
    }
    let rho_bound = 2.0 * p.lambda * fit.gamma * fit.gamma / fit.rate;
    // 5% slack on the envelope-implied bound
    let margin = rho_bound * 1.05 - rho_emp;
    let mut report = CertReport::from_margin("cost-controllability", evaluated, margin, 0.0);
    report.pass = report.pass && rho_emp.is_finite();
    report
        .details
        .push(format!("rho_emp = {rho_emp:.6e}, bound 2*lambda*Gamma^2/rate = {rho_bound:.6e}"));
    report.details.extend(details);
    Ok(CostControllability {
        report,
        rho_emp,
        rho_bound,
        fit,
    })
}

/// The feedback from the constructive reach strategy: freeze the infected
/// compartments (when unsaturated) while the susceptible fraction drains.
pub fn holding_feedback(x: &State, p: &ModelParams) -> ControlInput {
    if x.i <= 1e-14 {
        return p.u_nom();
    }
    let beta = (p.eta * x.e / (x.s * x.i)).clamp(p.beta_min, p.beta_nom);
    let gamma = (p.eta * x.e / x.i).clamp(p.gamma_nom, p.gamma_max);
    ControlInput { beta, gamma }
}

#[derive(Debug, Clone, Copy)]
pub struct StagedReachOptions {
    /// Grid step for both phases, days.
    pub h: f64,
    /// Bisection tolerance on the phase-1 event time, days.
    pub event_tol: f64,
    /// Budget, days.
    pub max_days: f64,
}

impl Default for StagedReachOptions {
    fn default() -> Self {
        StagedReachOptions {
            h: 0.01,
            event_tol: 1e-10,
            max_days: 5000.0,
        }
    }
}

/// Drive the state into the invariant box X_M with the staged strategy:
/// maximal intervention until the infectious fraction peaks, then the
/// holding feedback until the box is entered. Returns the trajectory up to
/// the entry time.
pub fn staged_reach_xm(
    x0: &State,
    p: &ModelParams,
    opts: &StagedReachOptions,
) -> Result<(Trajectory, f64)> {
    x0.validate()?;
    if p.in_xm(x0) {
        return Ok((Trajectory::single(0.0, *x0), 0.0));
    }
    let cap = p.i_max + 1e-9;
    let u_hat = p.u_max_intervention();
    let mut traj = Trajectory::single(0.0, *x0);
    let mut x = *x0;
    let mut t = 0.0;
    let max_steps = (opts.max_days / opts.h).ceil() as usize;

    let push = |traj: &mut Trajectory, t: f64, x: State, u: ControlInput, p: &ModelParams| {
        let prev = traj.final_state();
        traj.cost_samples.push(model::stage_cost(&prev, &u, p));
        traj.inputs.push(u);
        traj.times.push(t);
        traj.states.push(x);
    };

    // phase 1: maximal intervention until I stops rising (d/dt I = 0)
    let ddt_i = |x: &State| p.eta * x.e - p.gamma_max * x.i;
    let mut steps = 0usize;
    while ddt_i(&x) > 0.0 {
        let next = integrate::step_rk4(&x, &u_hat, opts.h, p);
        if ddt_i(&next) <= 0.0 {
            // bisection refinement of the event time inside this step
            let mut lo = 0.0;
            let mut hi = opts.h;
            while hi - lo > opts.event_tol {
                let mid = 0.5 * (lo + hi);
                let probe = integrate::step_rk4(&x, &u_hat, mid, p);
                if ddt_i(&probe) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let event = integrate::step_rk4(&x, &u_hat, hi, p);
            t += hi;
            push(&mut traj, t, event, u_hat, p);
            x = event;
            break;
        }
        t += opts.h;
        push(&mut traj, t, next, u_hat, p);
        x = next;
        if x.i > cap {
            return Err(Error::ConstraintViolation { time: t, i: x.i });
        }
        steps += 1;
        if steps > max_steps {
            return Err(Error::BudgetExceeded(format!(
                "infectious fraction still rising after {} days of maximal intervention",
                opts.max_days
            )));
        }
    }

    // phase 2: holding feedback until the invariant box is entered
    let mut steps2 = 0usize;
    while !p.in_xm(&x) {
        let u = holding_feedback(&x, p);
        let next = integrate::step_rk4(&x, &u, opts.h, p);
        t += opts.h;
        push(&mut traj, t, next, u, p);
        x = next;
        if x.i > cap {
            return Err(Error::ConstraintViolation { time: t, i: x.i });
        }
        steps2 += 1;
        if steps2 > max_steps {
            return Err(Error::BudgetExceeded(format!(
                "X_M not entered within {} days of the holding phase",
                opts.max_days
            )));
        }
    }
    Ok((traj, t))
}

/// Gronwall-type constant of the short-horizon lower bound:
/// exp(2 T max{eta, gamma_max}).
pub fn gronwall_bound(p: &ModelParams, horizon: f64) -> f64 {
    (2.0 * horizon * p.eta.max(p.gamma_max)).exp()
}

#[derive(Debug, Clone)]
pub struct A3Report {
    pub report: CertReport,
    pub c_bar: f64,
    /// Samples skipped because the short-horizon problem was infeasible.
    pub excluded: usize,
}

/// Verify `delta * l*(x0) <= C_bar * V_delta(x0)` over samples certified to
/// lie in the admissible subset, for each control horizon in `deltas`.
pub fn check_a3(
    p: &ModelParams,
    horizon: f64,
    n_samples: usize,
    deltas: &[f64],
    h: f64,
    seed: u64,
    solver: &SolverOptions,
) -> Result<A3Report> {
    for &d in deltas {
        if !(d > 0.0 && d <= horizon) {
            return Err(Error::InvalidParams(format!(
                "delta = {d} outside (0, T] with T = {horizon}"
            )));
        }
    }
    let c_bar = gronwall_bound(p, horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oracle_opts = model::AdmissibleOracleOptions::default();
    let mut worst = f64::INFINITY;
    let mut excluded = 0usize;
    let mut details = Vec::new();
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < n_samples {
        attempts += 1;
        if attempts > 1000 * n_samples {
            return Err(Error::BudgetExceeded(
                "could not draw enough admissible samples".into(),
            ));
        }
        let x0 = sample_x(&mut rng, p);
        match model::in_a_prime_inner(&x0, p, &oracle_opts) {
            Ok(true) => {}
            Ok(false) => continue,
            Err(_) => continue,
        }
        accepted += 1;
        let lstar = model::stage_cost_min(&x0, p);
        for &delta in deltas {
            let v = ocp::value_t(&x0, delta, p, h.min(delta), solver)?;
            if !v.is_finite() {
                excluded += 1;
                if details.len() < 8 {
                    details.push(format!(
                        "V_delta infeasible at ({}, {}, {}), delta = {delta}",
                        x0.s, x0.e, x0.i
                    ));
                }
                continue;
            }
            let margin = c_bar * v - delta * lstar;
            if margin < worst {
                worst = margin;
            }
        }
    }
    let mut report = CertReport::from_margin("a3-inequality", accepted, worst, 1e-12);
    report.details = details;
    Ok(A3Report {
        report,
        c_bar,
        excluded,
    })
}

/// Maximal relaxed-Lyapunov ratio over a closed-loop log:
/// `alpha_k = 1 - (V_k - V_{k+1}) / stage_integral_k`; decrease requires
/// the maximum to stay below one.
pub fn lyapunov_monitor(log: &MpcLog) -> Result<f64> {
    let mut alpha_max = f64::NEG_INFINITY;
    for r in &log.records {
        let Some(margin) = r.decrease_margin else {
            continue;
        };
        if r.stage_integral < 1e-14 {
            continue;
        }
        alpha_max = alpha_max.max(margin / r.stage_integral);
    }
    if alpha_max == f64::NEG_INFINITY {
        return Err(Error::VacuousLyapunovCheck);
    }
    Ok(alpha_max)
}
