//! Fixed-step integration of the controlled SEIR system and trajectory
//! bookkeeping.

use crate::error::{Error, Result};
use crate::model::{self, ControlInput, ModelParams, State};

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

/// Control signal evaluated during a simulation. Inputs are held constant
/// over each integration step (sample-and-hold).
pub enum ControlSignal<'a> {
    Constant(ControlInput),
    /// One input per integration step; the last entry is held if the
    /// sequence is shorter than the simulation.
    PiecewiseConstant(&'a [ControlInput]),
    /// State feedback sampled at the start of each step.
    Feedback(&'a dyn Fn(&State, f64) -> ControlInput),
}

impl ControlSignal<'_> {
    fn eval(&self, step: usize, x: &State, t: f64) -> ControlInput {
        match self {
            ControlSignal::Constant(u) => *u,
            ControlSignal::PiecewiseConstant(seq) => {
                let k = step.min(seq.len().saturating_sub(1));
                seq[k]
            }
            ControlSignal::Feedback(f) => f(x, t),
        }
    }
}

/// Threshold-crossing events observed during a simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimEvents {
    /// First grid time at which the state is inside the box X_M.
    pub first_xm_entry: Option<f64>,
    /// First grid time at which the state is inside the box X_A.
    pub first_xa_entry: Option<f64>,
    /// First grid time at which the state constraint I <= I_max is violated.
    pub first_violation: Option<f64>,
    /// Number of steps on which a negative component was clamped to zero.
    pub clamp_events: usize,
    /// The initial state was outside the constraint set X.
    pub x0_outside_x: bool,
}

/// Time grid with states per node, inputs and stage-cost samples per interval.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub inputs: Vec<ControlInput>,
    pub cost_samples: Vec<f64>,
    pub events: SimEvents,
}

impl Trajectory {
    pub fn single(t: f64, x: State) -> Self {
        Trajectory {
            times: vec![t],
            states: vec![x],
            inputs: Vec::new(),
            cost_samples: Vec::new(),
            events: SimEvents::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> State {
        *self.states.last().expect("empty trajectory")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("empty trajectory")
    }

    /// Left-endpoint quadrature of the recorded stage costs.
    pub fn cost_integral(&self) -> f64 {
        self.cost_samples
            .iter()
            .zip(self.times.windows(2))
            .map(|(c, w)| c * (w[1] - w[0]))
            .sum()
    }

    /// Largest infectious fraction over all nodes.
    pub fn max_infectious(&self) -> f64 {
        self.states.iter().map(|x| x.i).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm gap to another trajectory over the common time grid
    /// (nodes matched by time within 1e-9 days).
    pub fn sup_norm_gap(&self, other: &Trajectory) -> f64 {
        let mut gap: f64 = 0.0;
        let mut j = 0;
        for (t, x) in self.times.iter().zip(&self.states) {
            while j < other.times.len() && other.times[j] < t - 1e-9 {
                j += 1;
            }
            if j >= other.times.len() {
                break;
            }
            if (other.times[j] - t).abs() <= 1e-9 {
                let y = &other.states[j];
                gap = gap
                    .max((x.s - y.s).abs())
                    .max((x.e - y.e).abs())
                    .max((x.i - y.i).abs());
            }
        }
        gap
    }

    /// Append another trajectory whose first node coincides with this
    /// trajectory's last node.
    pub fn extend_with(&mut self, tail: &Trajectory) {
        debug_assert!(!self.is_empty() && !tail.is_empty());
        debug_assert!((self.final_time() - tail.times[0]).abs() < 1e-9);
        self.times.extend_from_slice(&tail.times[1..]);
        self.states.extend_from_slice(&tail.states[1..]);
        self.inputs.extend_from_slice(&tail.inputs);
        self.cost_samples.extend_from_slice(&tail.cost_samples);
        self.events.clamp_events += tail.events.clamp_events;
        let merge = |a: &mut Option<f64>, b: Option<f64>| {
            if a.is_none() {
                *a = b;
            }
        };
        merge(&mut self.events.first_xm_entry, tail.events.first_xm_entry);
        merge(&mut self.events.first_xa_entry, tail.events.first_xa_entry);
        merge(&mut self.events.first_violation, tail.events.first_violation);
    }
}

fn clamp_nonneg(raw: [f64; 3]) -> (State, bool) {
    let clamped = raw.iter().any(|v| *v < 0.0);
    (
        State {
            s: raw[0].max(0.0),
            e: raw[1].max(0.0),
            i: raw[2].max(0.0),
        },
        clamped,
    )
}

/// One explicit Euler step with negative components clamped to zero.
pub fn step_euler(x: &State, u: &ControlInput, h: f64, p: &ModelParams) -> State {
    step_euler_logged(x, u, h, p).0
}

/// Euler step reporting whether clamping occurred.
pub fn step_euler_logged(x: &State, u: &ControlInput, h: f64, p: &ModelParams) -> (State, bool) {
    let f = model::rhs_raw(x, u, p);
    clamp_nonneg([x.s + h * f[0], x.e + h * f[1], x.i + h * f[2]])
}

/// One classical Runge-Kutta 4 step; the input is held constant over the
/// step and negative components are clamped to zero.
pub fn step_rk4(x: &State, u: &ControlInput, h: f64, p: &ModelParams) -> State {
    step_rk4_logged(x, u, h, p).0
}

pub fn step_rk4_logged(x: &State, u: &ControlInput, h: f64, p: &ModelParams) -> (State, bool) {
    let eval = |y: [f64; 3]| model::rhs_raw(&State::from_array(y), u, p);
    let y0 = x.as_array();
    let k1 = eval(y0);
    let k2 = eval(shift(y0, k1, h / 2.0));
    let k3 = eval(shift(y0, k2, h / 2.0));
    let k4 = eval(shift(y0, k3, h));
    let mut out = [0.0; 3];
    for j in 0..3 {
        out[j] = y0[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    clamp_nonneg(out)
}

#[inline]
fn shift(y: [f64; 3], k: [f64; 3], h: f64) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}

/// Simulate the controlled system on a fixed grid from `x0` to `t_end`.
///
/// `t_end` must be an integer multiple of `h`. Inputs outside the admissible
/// box `U` are rejected.
pub fn simulate(
    x0: &State,
    signal: &ControlSignal,
    t_end: f64,
    h: f64,
    method: Method,
    p: &ModelParams,
) -> Result<Trajectory> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    let steps_f = t_end / h;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "t_end = {t_end} is not an integer multiple of h = {h}"
        )));
    }
    x0.validate()?;

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps),
        cost_samples: Vec::with_capacity(steps),
        events: SimEvents {
            x0_outside_x: !p.in_x(x0),
            ..SimEvents::default()
        },
    };
    traj.times.push(0.0);
    traj.states.push(*x0);
    let record_events = |traj: &mut Trajectory, t: f64, x: &State| {
        if traj.events.first_xm_entry.is_none() && p.in_xm(x) {
            traj.events.first_xm_entry = Some(t);
        }
        if traj.events.first_xa_entry.is_none() && p.in_xa(x) {
            traj.events.first_xa_entry = Some(t);
        }
        if traj.events.first_violation.is_none() && x.i > p.i_max + 1e-12 {
            traj.events.first_violation = Some(t);
        }
    };
    record_events(&mut traj, 0.0, x0);

    let mut x = *x0;
    for k in 0..steps {
        let t = k as f64 * h;
        let u = signal.eval(k, &x, t);
        if !u.in_u(p) {
            return Err(Error::InputOutsideU {
                beta: u.beta,
                gamma: u.gamma,
            });
        }
        traj.cost_samples.push(model::stage_cost(&x, &u, p));
        traj.inputs.push(u);
        let (next, clamped) = match method {
            Method::Euler => step_euler_logged(&x, &u, h, p),
            Method::Rk4 => step_rk4_logged(&x, &u, h, p),
        };
        if clamped {
            traj.events.clamp_events += 1;
        }
        x = next;
        let t_next = (k + 1) as f64 * h;
        traj.times.push(t_next);
        traj.states.push(x);
        record_events(&mut traj, t_next, &x);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p() -> ModelParams {
        ModelParams::baseline()
    }

    #[test]
    fn euler_fixed_point_at_disease_free_state() {
        let x = State::new(0.5, 0.0, 0.0).unwrap();
        let next = step_euler(&x, &p().u_max_intervention(), 0.25, &p());
        assert_eq!(next, x);
        let next = step_rk4(&x, &p().u_nom(), 0.25, &p());
        assert_eq!(next, x);
    }

    #[test]
    fn euler_hand_computed_step() {
        let x = State::new(0.5, 0.18, 0.01).unwrap();
        let next = step_euler(&x, &p().u_nom(), 0.25, &p());
        assert_abs_diff_eq!(next.s, 0.499450, epsilon = 1e-6);
        assert_abs_diff_eq!(next.e, 0.170768, epsilon = 1e-6);
        assert_abs_diff_eq!(next.i, 0.019398, epsilon = 1e-6);
    }

    #[test]
    fn component_sum_never_increases() {
        let mut x = State::new(0.5, 0.18, 0.01).unwrap();
        let u = p().u_nom();
        for _ in 0..400 {
            let next = step_euler(&x, &u, 0.25, &p());
            assert!(next.s + next.e + next.i <= x.s + x.e + x.i + 1e-14);
            x = next;
        }
    }

    #[test]
    fn rk4_and_euler_agree_to_second_order() {
        // refine h and confirm the per-step gap shrinks like h^2
        let x = State::new(0.5, 0.18, 0.01).unwrap();
        let u = p().u_nom();
        let gap = |h: f64| {
            let a = step_euler(&x, &u, h, &p());
            let b = step_rk4(&x, &u, h, &p());
            (a.s - b.s).abs().max((a.e - b.e).abs()).max((a.i - b.i).abs())
        };
        let g1 = gap(0.2);
        let g2 = gap(0.02);
        // order ~2 => shrinking by 10x in h shrinks the gap ~100x
        let order = (g1 / g2).log10();
        assert!(order > 1.7 && order < 2.3, "observed order {order}");
    }

    #[test]
    fn rk4_self_convergence() {
        let x0 = State::new(0.5, 0.18, 0.01).unwrap();
        let u = ControlSignal::Constant(p().u_nom());
        let coarse = simulate(&x0, &u, 100.0, 0.25, Method::Rk4, &p()).unwrap();
        let fine = simulate(&x0, &u, 100.0, 0.001, Method::Rk4, &p()).unwrap();
        assert!(coarse.sup_norm_gap(&fine) < 1e-6);
    }

    #[test]
    fn nominal_run_from_xm_stays_and_decays() {
        let x0 = State::new(0.3, 0.01, 0.01).unwrap();
        let pp = p();
        let traj = simulate(
            &x0,
            &ControlSignal::Constant(pp.u_nom()),
            300.0,
            0.25,
            Method::Euler,
            &pp,
        )
        .unwrap();
        assert_eq!(traj.events.first_xm_entry, Some(0.0));
        for x in &traj.states {
            assert!(pp.in_xm(x));
        }
        // The slow eigenvalue of the linearisation near S ~ 0.3 is about
        // -0.013/day, so 300 days shrink the infection by roughly e^{-4}.
        let end = traj.final_state();
        assert!(end.e < 1e-3 && end.i < 1e-3, "E={}, I={}", end.e, end.i);
        assert!(end.e < 0.01 / 10.0 && end.i < 0.01 / 10.0);
    }

    #[test]
    fn constant_trajectory_from_equilibrium() {
        let x0 = State::new(0.2, 0.0, 0.0).unwrap();
        let traj = simulate(
            &x0,
            &ControlSignal::Constant(p().u_max_intervention()),
            10.0,
            0.25,
            Method::Euler,
            &p(),
        )
        .unwrap();
        for x in &traj.states {
            assert_eq!(*x, x0);
        }
    }

    #[test]
    fn maximal_intervention_reaches_xa_with_cap_satisfied() {
        let x0 = State::new(0.5, 0.18, 0.01).unwrap();
        let pp = p();
        let traj = simulate(
            &x0,
            &ControlSignal::Constant(pp.u_max_intervention()),
            300.0,
            0.25,
            Method::Rk4,
            &pp,
        )
        .unwrap();
        assert!(traj.events.first_xa_entry.is_some());
        assert!(traj.events.first_violation.is_none());
        assert!(traj.max_infectious() <= pp.i_max);
    }

    #[test]
    fn susceptible_fraction_is_monotone_nonincreasing() {
        let x0 = State::new(0.6, 0.1, 0.02).unwrap();
        let traj = simulate(
            &x0,
            &ControlSignal::Constant(p().u_nom()),
            200.0,
            0.25,
            Method::Euler,
            &p(),
        )
        .unwrap();
        for w in traj.states.windows(2) {
            assert!(w[1].s <= w[0].s + 1e-15);
        }
    }

    #[test]
    fn non_multiple_t_end_rejected() {
        let x0 = State::new(0.2, 0.0, 0.0).unwrap();
        let r = simulate(
            &x0,
            &ControlSignal::Constant(p().u_nom()),
            1.1,
            0.25,
            Method::Euler,
            &p(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn inadmissible_signal_rejected() {
        let x0 = State::new(0.2, 0.01, 0.0).unwrap();
        let bad = ControlInput {
            beta: 0.1,
            gamma: 0.2,
        };
        let r = simulate(
            &x0,
            &ControlSignal::Constant(bad),
            1.0,
            0.25,
            Method::Euler,
            &p(),
        );
        assert!(matches!(r, Err(Error::InputOutsideU { .. })));
    }

    #[test]
    fn piecewise_signal_holds_last_input() {
        let x0 = State::new(0.4, 0.02, 0.01).unwrap();
        let seq = vec![p().u_max_intervention(), p().u_nom()];
        let traj = simulate(
            &x0,
            &ControlSignal::PiecewiseConstant(&seq),
            2.0,
            0.5,
            Method::Euler,
            &p(),
        )
        .unwrap();
        assert_eq!(traj.inputs[0], p().u_max_intervention());
        for u in &traj.inputs[1..] {
            assert_eq!(*u, p().u_nom());
        }
    }
}
