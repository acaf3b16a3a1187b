//! Receding-horizon control without terminal cost or terminal constraint:
//! recursively solve the finite-horizon problem, apply the first control
//! segment, shift the warm start, and repeat until the epidemic is
//! eradicated.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::integrate::{SimEvents, Trajectory};
use crate::model::{self, ControlInput, ModelParams, State};
use crate::ocp::{self, OcpSolution, OcpSpec, SolveStatus, SolverOptions};

/// Closed-loop configuration. The prediction horizon is `n_steps * delta`.
#[derive(Debug, Clone, Copy)]
pub struct MpcConfig {
    /// Control horizon (time shift between solves), days.
    pub delta: f64,
    /// Number of control horizons in the prediction horizon.
    pub n_steps: usize,
    /// Transcription step, days.
    pub h: f64,
    /// Loop terminates once max{E, I} falls to this value.
    pub termination_tol: f64,
    pub max_sim_days: f64,
    pub params: ModelParams,
    pub solver: SolverOptions,
    /// Run the admissible-set oracle on the initial state and record a
    /// warning when it does not certify membership.
    pub check_a_prime: bool,
}

impl MpcConfig {
    pub fn new(params: ModelParams, delta: f64, n_steps: usize, h: f64) -> Self {
        MpcConfig {
            delta,
            n_steps,
            h,
            termination_tol: 1e-8,
            max_sim_days: 2500.0,
            params,
            solver: SolverOptions::default(),
            check_a_prime: false,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.delta
    }

    pub fn steps_per_delta(&self) -> usize {
        (self.delta / self.h).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.delta > 0.0) || self.n_steps < 1 {
            return Err(Error::InvalidParams(format!(
                "need delta > 0 and N >= 1, got delta={}, N={}",
                self.delta, self.n_steps
            )));
        }
        let r = self.delta / self.h;
        if (r - r.round()).abs() > 1e-9 || r < 0.5 {
            return Err(Error::InvalidParams(format!(
                "delta/h must be a positive integer, got delta={}, h={}",
                self.delta, self.h
            )));
        }
        if !(self.termination_tol > 0.0) {
            return Err(Error::InvalidParams(
                "termination tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of the closed loop.
#[derive(Debug, Clone)]
pub struct MpcIterationRecord {
    pub index: usize,
    /// Loop time at the start of the iteration, days.
    pub t: f64,
    /// Finite-horizon value at the iteration's state.
    pub value: f64,
    /// Realized stage-cost integral over the applied segment.
    pub stage_integral: f64,
    /// `V_T(next) - V_T(curr) + stage_integral`; `None` for the final
    /// iteration (no successor solve).
    pub decrease_margin: Option<f64>,
    pub solver_status: SolveStatus,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub wall_time_s: f64,
    /// Input segment applied over `[t, t + delta]`.
    pub applied: Vec<ControlInput>,
}

#[derive(Debug, Clone, Default)]
pub struct MpcLog {
    pub records: Vec<MpcIterationRecord>,
    pub terminated: bool,
    pub termination_time: Option<f64>,
    /// The admissible-set oracle did not certify the initial state.
    pub a_prime_warning: bool,
}

/// Run the receding-horizon loop from `x0` until the termination criterion
/// `max{E, I} <= termination_tol` is met.
pub fn run_mpc(x0: &State, cfg: &MpcConfig) -> Result<(Trajectory, MpcLog)> {
    cfg.validate()?;
    x0.validate()?;
    let p = &cfg.params;
    if !p.in_x(x0) {
        return Err(Error::Domain(format!(
            "initial state ({}, {}, {}) violates the state constraints",
            x0.s, x0.e, x0.i
        )));
    }
    let mut log = MpcLog::default();
    if cfg.check_a_prime {
        log.a_prime_warning = !model::in_a_prime_inner_default(x0, p).unwrap_or(false);
    }

    let mut traj = Trajectory::single(0.0, *x0);
    let steps_d = cfg.steps_per_delta();
    let mut x = *x0;
    let mut t = 0.0;
    let mut warm: Option<Vec<ControlInput>> = None;
    let mut iter = 0usize;

    loop {
        if x.e.max(x.i) <= cfg.termination_tol {
            log.terminated = true;
            log.termination_time = Some(t);
            break;
        }
        if t > cfg.max_sim_days + 1e-9 {
            return Err(Error::MaxSimDaysExceeded {
                max_days: cfg.max_sim_days,
            });
        }
        let started = Instant::now();
        let (sol, _) = solve_with_retry(&x, cfg, warm.as_deref())?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::MpcInfeasibleAt {
                iteration: iter,
                time: t,
                s: x.s,
                e: x.e,
                i: x.i,
            });
        }
        let stage_integral: f64 =
            cfg.h * sol.traj.cost_samples[..steps_d].iter().sum::<f64>();

        // stitch the applied segment onto the closed-loop trajectory
        let mut segment = Trajectory {
            times: (0..=steps_d).map(|k| t + k as f64 * cfg.h).collect(),
            states: sol.traj.states[..=steps_d].to_vec(),
            inputs: sol.u_star[..steps_d].to_vec(),
            cost_samples: sol.traj.cost_samples[..steps_d].to_vec(),
            events: SimEvents::default(),
        };
        for (tt, xx) in segment.times.iter().zip(&segment.states) {
            if segment.events.first_violation.is_none() && xx.i > p.i_max + 1e-12 {
                segment.events.first_violation = Some(*tt);
            }
        }
        traj.extend_with(&segment);

        // shift-and-extend warm start for the next solve
        let mut shifted: Vec<ControlInput> = sol.u_star[steps_d..].to_vec();
        shifted.extend(std::iter::repeat(p.u_nom()).take(steps_d));
        let value = sol.cost;
        if let Some(prev) = log.records.last_mut() {
            prev.decrease_margin = Some(value - prev.value + prev.stage_integral);
        }
        log.records.push(MpcIterationRecord {
            index: iter,
            t,
            value,
            stage_integral,
            decrease_margin: None,
            solver_status: sol.status,
            kkt_residual: sol.kkt_residual,
            constraint_violation: sol.constraint_violation,
            wall_time_s: started.elapsed().as_secs_f64(),
            applied: sol.u_star[..steps_d].to_vec(),
        });
        x = sol.traj.states[steps_d];
        t += cfg.delta;
        warm = Some(shifted);
        iter += 1;
    }
    Ok((traj, log))
}

/// One iteration of the loop exposed as a feedback map: solve from `x` and
/// return the input segment to apply over `[0, delta]` alongside the full
/// solution.
pub fn mpc_feedback(
    x: &State,
    cfg: &MpcConfig,
    warm_start: Option<&[ControlInput]>,
) -> Result<(Vec<ControlInput>, OcpSolution)> {
    cfg.validate()?;
    let (sol, _) = solve_with_retry(x, cfg, warm_start)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(format!(
            "no feasible input segment from state ({}, {}, {})",
            x.s, x.e, x.i
        )));
    }
    let seg = sol.u_star[..cfg.steps_per_delta()].to_vec();
    Ok((seg, sol))
}

/// Solve, retrying once from the nominal cold start when the warm-started
/// solve fails to converge feasibly.
fn solve_with_retry(
    x: &State,
    cfg: &MpcConfig,
    warm: Option<&[ControlInput]>,
) -> Result<(OcpSolution, bool)> {
    let spec = OcpSpec::new(*x, cfg.horizon(), cfg.h, cfg.params)?;
    let sol = ocp::solve(&spec, warm, &cfg.solver)?;
    let acceptable =
        sol.status == SolveStatus::Converged && sol.constraint_violation <= cfg.solver.feas_tol;
    if acceptable || warm.is_none() {
        return Ok((sol, false));
    }
    let cold = ocp::solve(&spec, None, &cfg.solver)?;
    // keep whichever is feasible with lower cost
    let pick_cold = match (cold.status, sol.status) {
        (SolveStatus::Infeasible, _) => false,
        (_, SolveStatus::Infeasible) => true,
        _ => {
            cold.constraint_violation <= cfg.solver.feas_tol
                && (sol.constraint_violation > cfg.solver.feas_tol || cold.cost < sol.cost)
        }
    };
    Ok(if pick_cold { (cold, true) } else { (sol, true) })
}

/// First times at which `max{E(t), I(t)}` drops below each threshold, with
/// linear interpolation between grid nodes.
pub fn epidemic_lifetime(traj: &Trajectory, thresholds: &[f64]) -> Result<Vec<f64>> {
    let metric: Vec<f64> = traj.states.iter().map(|x| x.e.max(x.i)).collect();
    let mut out = Vec::with_capacity(thresholds.len());
    for &val in thresholds {
        let k = metric
            .iter()
            .position(|m| *m < val)
            .ok_or(Error::ThresholdNotReached { threshold: val })?;
        if k == 0 {
            out.push(0.0);
        } else {
            let (m0, m1) = (metric[k - 1], metric[k]);
            let (t0, t1) = (traj.times[k - 1], traj.times[k]);
            out.push(t0 + (m0 - val) / (m0 - m1) * (t1 - t0));
        }
    }
    Ok(out)
}

/// Thresholds of the epidemic-lifetime table.
pub const LIFETIME_THRESHOLDS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];
