//! Constrained SEIR dynamics, stage costs, and the state-space sets used
//! throughout the library.
//!
//! The state is the triple (S, E, I) of susceptible, exposed, and infectious
//! population fractions (the removed compartment absorbs the remainder).
//! The control is the pair (beta, gamma) of contact and removal rates,
//! constrained to the box `U = [beta_min, beta_nom] x [gamma_nom, gamma_max]`.

use crate::error::{Error, Result};
use crate::integrate;

/// Absolute tolerance used to absorb integrator round-off when checking
/// nonnegativity of states.
pub const STATE_TOL: f64 = 1e-12;

/// Epidemiological and constraint constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Strongest allowed social distancing (lower bound on beta), 1/day.
    pub beta_min: f64,
    /// Nominal contact rate without intervention, 1/day.
    pub beta_nom: f64,
    /// Nominal removal rate without intervention, 1/day.
    pub gamma_nom: f64,
    /// Strongest allowed quarantining (upper bound on gamma), 1/day.
    pub gamma_max: f64,
    /// Inverse incubation time, 1/day.
    pub eta: f64,
    /// Hard cap on the infectious fraction, in (0, 1].
    pub i_max: f64,
    /// Threshold excluding states with vanishingly small infection numbers
    /// near the non-nominal equilibria.
    pub epsilon: f64,
    /// Stage-cost weight between state and input penalties, in (0, 1].
    pub lambda: f64,
}

impl ModelParams {
    /// Parameter set used in the reference numerical scenario.
    pub fn baseline() -> Self {
        ModelParams {
            beta_min: 0.22,
            beta_nom: 0.44,
            gamma_nom: 1.0 / 6.5,
            gamma_max: 0.5,
            eta: 1.0 / 4.6,
            i_max: 0.05,
            epsilon: 1e-6,
            lambda: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_nom) {
            return Err(Error::InvalidParams(format!(
                "need 0 < beta_min < beta_nom, got beta_min={}, beta_nom={}",
                self.beta_min, self.beta_nom
            )));
        }
        if !(self.gamma_nom > 0.0 && self.gamma_nom < self.gamma_max) {
            return Err(Error::InvalidParams(format!(
                "need 0 < gamma_nom < gamma_max, got gamma_nom={}, gamma_max={}",
                self.gamma_nom, self.gamma_max
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParams(format!("need eta > 0, got {}", self.eta)));
        }
        if !(self.i_max > 0.0 && self.i_max <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 < i_max <= 1, got {}",
                self.i_max
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 < lambda <= 1, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need epsilon > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Nominal input (no societal intervention).
    pub fn u_nom(&self) -> ControlInput {
        ControlInput {
            beta: self.beta_nom,
            gamma: self.gamma_nom,
        }
    }

    /// Maximal intervention (strongest distancing and quarantining).
    pub fn u_max_intervention(&self) -> ControlInput {
        ControlInput {
            beta: self.beta_min,
            gamma: self.gamma_max,
        }
    }

    pub fn bounds(&self) -> DerivedBounds {
        DerivedBounds::from_params(self)
    }

    /// Membership in the full constraint set `X`: components in [0, 1],
    /// the simplex condition, and the infection cap.
    pub fn in_x(&self, x: &State) -> bool {
        let lo = -STATE_TOL;
        x.s >= lo
            && x.e >= lo
            && x.i >= lo
            && x.s <= 1.0
            && x.e <= 1.0
            && x.i <= 1.0
            && x.s + x.e + x.i <= 1.0 + STATE_TOL
            && x.i <= self.i_max
    }

    /// Membership in the robust invariant box `X_M`.
    pub fn in_xm(&self, x: &State) -> bool {
        let b = self.bounds();
        self.in_x(x) && x.s <= b.xbar1 && x.e <= b.xbar2
    }

    /// Membership in the box `X_A` reached under maximal intervention.
    pub fn in_xa(&self, x: &State) -> bool {
        let b = self.bounds();
        self.in_x(x) && x.s <= b.xunder1 && x.e <= self.gamma_max * self.i_max / self.eta
    }

    /// Membership in the continuum of nominal disease-free equilibria,
    /// up to the given tolerance.
    pub fn in_e_nom(&self, x: &State, tol: f64) -> bool {
        x.e <= tol && x.i <= tol && x.s <= self.bounds().xbar1 + tol
    }

    /// Signed distance to the complement of `X_M` over its box faces
    /// (nonnegative iff inside the box; the `X` membership is not included).
    pub fn xm_margin(&self, x: &State) -> f64 {
        let b = self.bounds();
        let m = (b.xbar1 - x.s).min(b.xbar2 - x.e).min(self.i_max - x.i);
        m.min(x.s).min(x.e).min(x.i)
    }
}

/// Compartment proportions (S, E, I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub s: f64,
    pub e: f64,
    pub i: f64,
}

impl State {
    pub fn new(s: f64, e: f64, i: f64) -> Result<Self> {
        let x = State { s, e, i };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        let lo = -STATE_TOL;
        for (name, v) in [("S", self.s), ("E", self.e), ("I", self.i)] {
            if !(v >= lo && v <= 1.0) {
                return Err(Error::Domain(format!(
                    "compartment {name} = {v} outside [0, 1]"
                )));
            }
        }
        if self.s + self.e + self.i > 1.0 + STATE_TOL {
            return Err(Error::Domain(format!(
                "S + E + I = {} exceeds 1",
                self.s + self.e + self.i
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s, self.e, self.i]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        State {
            s: a[0],
            e: a[1],
            i: a[2],
        }
    }

    /// Euclidean norm of the infected compartments (E, I).
    pub fn infection_norm(&self) -> f64 {
        (self.e * self.e + self.i * self.i).sqrt()
    }
}

/// Intervention pair (beta, gamma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub beta: f64,
    pub gamma: f64,
}

impl ControlInput {
    pub fn in_u(&self, p: &ModelParams) -> bool {
        self.beta >= p.beta_min
            && self.beta <= p.beta_nom
            && self.gamma >= p.gamma_nom
            && self.gamma <= p.gamma_max
    }

    /// Componentwise projection onto the admissible box `U`.
    pub fn project(&self, p: &ModelParams) -> ControlInput {
        ControlInput {
            beta: self.beta.clamp(p.beta_min, p.beta_nom),
            gamma: self.gamma.clamp(p.gamma_nom, p.gamma_max),
        }
    }
}

/// Box bounds derived from the model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedBounds {
    /// S-bound of the robust invariant box: gamma_nom / beta_nom.
    pub xbar1: f64,
    /// E-bound of the robust invariant box: gamma_nom * I_max / eta.
    pub xbar2: f64,
    /// S-bound reached under maximal intervention: gamma_max / beta_min.
    pub xunder1: f64,
}

impl DerivedBounds {
    pub fn from_params(p: &ModelParams) -> Self {
        DerivedBounds {
            xbar1: p.gamma_nom / p.beta_nom,
            xbar2: p.gamma_nom * p.i_max / p.eta,
            xunder1: p.gamma_max / p.beta_min,
        }
    }
}

/// Right-hand side of the controlled SEIR dynamics, validated.
pub fn rhs(x: &State, u: &ControlInput, p: &ModelParams) -> Result<[f64; 3]> {
    x.validate()?;
    if !u.in_u(p) {
        return Err(Error::InputOutsideU {
            beta: u.beta,
            gamma: u.gamma,
        });
    }
    Ok(rhs_raw(x, u, p))
}

/// Right-hand side without domain checks; used by integrator and solver
/// inner loops where slight round-off excursions are expected.
#[inline]
pub fn rhs_raw(x: &State, u: &ControlInput, p: &ModelParams) -> [f64; 3] {
    let infections = u.beta * x.s * x.i;
    [
        -infections,
        infections - p.eta * x.e,
        p.eta * x.e - u.gamma * x.i,
    ]
}

/// Quadratic stage cost: lambda * (E^2 + I^2) + (1 - lambda) * |u - u_nom|^2.
#[inline]
pub fn stage_cost(x: &State, u: &ControlInput, p: &ModelParams) -> f64 {
    let db = u.beta - p.beta_nom;
    let dg = u.gamma - p.gamma_nom;
    p.lambda * (x.e * x.e + x.i * x.i) + (1.0 - p.lambda) * (db * db + dg * dg)
}

/// Pointwise minimum of the stage cost over admissible inputs; the minimizer
/// is always `u_nom`.
#[inline]
pub fn stage_cost_min(x: &State, p: &ModelParams) -> f64 {
    p.lambda * (x.e * x.e + x.i * x.i)
}

/// Options for the admissible-set sufficiency oracle.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibleOracleOptions {
    /// Integration step, days.
    pub h: f64,
    /// Simulation budget, days.
    pub max_days: f64,
}

impl Default for AdmissibleOracleOptions {
    fn default() -> Self {
        AdmissibleOracleOptions {
            h: 0.05,
            max_days: 2000.0,
        }
    }
}

/// Sufficiency oracle for membership of the set `A'` (admissible set minus
/// the thin neighbourhood of non-nominal equilibria with vanishing infection
/// numbers).
///
/// A `true` return certifies membership: the maximal intervention keeps the
/// infection cap satisfied until the trajectory reaches the box `X_A`, and
/// the state is not in the excluded neighbourhood. A `false` return is
/// inconclusive about true membership.
pub fn in_a_prime_inner(
    x0: &State,
    p: &ModelParams,
    opts: &AdmissibleOracleOptions,
) -> Result<bool> {
    x0.validate()?;
    if !p.in_x(x0) {
        return Ok(false);
    }
    let b = p.bounds();
    // Exclusion region: S at or above the nominal box bound with infection
    // numbers below the threshold. Membership of A' requires
    // x3 * (x2 + x3) >= epsilon there.
    if x0.s >= b.xbar1 && x0.i * (x0.e + x0.i) < p.epsilon {
        return Ok(false);
    }
    if p.in_xa(x0) {
        return Ok(true);
    }
    let u_hat = p.u_max_intervention();
    let cap = p.i_max + STATE_TOL;
    let steps = (opts.max_days / opts.h).ceil() as usize;
    let mut x = *x0;
    for _ in 0..steps {
        x = integrate::step_rk4(&x, &u_hat, opts.h, p);
        if x.i > cap {
            return Ok(false);
        }
        if p.in_xa(&x) {
            return Ok(true);
        }
    }
    Err(Error::BudgetExceeded(format!(
        "X_A not entered within {} days under maximal intervention",
        opts.max_days
    )))
}

/// Convenience wrapper with default oracle options.
pub fn in_a_prime_inner_default(x0: &State, p: &ModelParams) -> Result<bool> {
    in_a_prime_inner(x0, p, &AdmissibleOracleOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p() -> ModelParams {
        ModelParams::baseline()
    }

    #[test]
    fn rhs_at_disease_free_equilibrium_is_zero() {
        let x = State::new(0.5, 0.0, 0.0).unwrap();
        let u = ControlInput {
            beta: 0.44,
            gamma: 1.0 / 6.5,
        };
        let f = rhs(&x, &u, &p()).unwrap();
        assert_eq!(f, [0.0, 0.0, 0.0]);
        let u = ControlInput {
            beta: 0.3,
            gamma: 0.2,
        };
        assert_eq!(rhs(&x, &u, &p()).unwrap(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_hand_evaluation() {
        let x = State::new(0.5, 0.18, 0.01).unwrap();
        let u = ControlInput {
            beta: 0.44,
            gamma: 1.0 / 6.5,
        };
        let f = rhs(&x, &u, &p()).unwrap();
        assert_abs_diff_eq!(f[0], -0.0022, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], 0.0022 - 0.18 / 4.6, epsilon = 1e-12);
        assert_abs_diff_eq!(f[2], 0.18 / 4.6 - 0.01 / 6.5, epsilon = 1e-12);
        // magnitudes quoted to 6 decimals
        assert_abs_diff_eq!(f[1], -0.036930, epsilon = 1e-6);
        assert_abs_diff_eq!(f[2], 0.037592, epsilon = 1e-6);
    }

    #[test]
    fn rhs_structure_with_no_infectious() {
        let x = State::new(0.4, 0.2, 0.0).unwrap();
        let f = rhs(&x, &p().u_nom(), &p()).unwrap();
        assert_eq!(f[0], 0.0);
        assert_abs_diff_eq!(f[2], p().eta * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn rhs_components_sum_to_minus_gamma_i() {
        let x = State::new(0.3, 0.05, 0.02).unwrap();
        let u = ControlInput {
            beta: 0.3,
            gamma: 0.4,
        };
        let f = rhs(&x, &u, &p()).unwrap();
        assert_abs_diff_eq!(f[0] + f[1] + f[2], -u.gamma * x.i, epsilon = 1e-15);
    }

    #[test]
    fn rhs_rejects_invalid_state() {
        let x = State {
            s: 0.8,
            e: 0.5,
            i: 0.5,
        };
        assert!(rhs(&x, &p().u_nom(), &p()).is_err());
    }

    #[test]
    fn stage_cost_zero_at_equilibrium_with_nominal_input() {
        let x = State::new(0.9, 0.0, 0.0).unwrap();
        for lambda in [0.01, 0.5, 1.0] {
            let mut pp = p();
            pp.lambda = lambda;
            assert_eq!(stage_cost(&x, &pp.u_nom(), &pp), 0.0);
        }
    }

    #[test]
    fn stage_cost_hand_evaluation() {
        let x = State::new(0.5, 0.18, 0.01).unwrap();
        let c = stage_cost(&x, &p().u_nom(), &p());
        assert_abs_diff_eq!(c, 0.5 * (0.0324 + 0.0001), epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.016250, epsilon = 1e-12);
    }

    #[test]
    fn stage_cost_with_lambda_one_ignores_input() {
        let mut pp = p();
        pp.lambda = 1.0;
        let x = State::new(0.5, 0.0, 0.0).unwrap();
        let u = ControlInput {
            beta: 0.22,
            gamma: 0.5,
        };
        assert_eq!(stage_cost(&x, &u, &pp), 0.0);
    }

    #[test]
    fn stage_cost_min_matches_nominal_input_cost() {
        let x = State::new(0.5, 0.18, 0.01).unwrap();
        assert_eq!(stage_cost_min(&x, &p()), stage_cost(&x, &p().u_nom(), &p()));
        assert_abs_diff_eq!(stage_cost_min(&x, &p()), 0.016250, epsilon = 1e-12);
        assert_eq!(stage_cost_min(&State::new(1.0, 0.0, 0.0).unwrap(), &p()), 0.0);
    }

    #[test]
    fn stage_cost_min_is_corner_minimum() {
        // The minimizer over U is u_nom; check against the four box corners.
        let pp = p();
        let x = State::new(0.4, 0.1, 0.02).unwrap();
        let corners = [
            ControlInput { beta: pp.beta_min, gamma: pp.gamma_nom },
            ControlInput { beta: pp.beta_min, gamma: pp.gamma_max },
            ControlInput { beta: pp.beta_nom, gamma: pp.gamma_nom },
            ControlInput { beta: pp.beta_nom, gamma: pp.gamma_max },
        ];
        let best = corners
            .iter()
            .map(|u| stage_cost(&x, u, &pp))
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(stage_cost_min(&x, &pp), best, epsilon = 1e-15);
    }

    #[test]
    fn derived_bounds_baseline_values() {
        let b = p().bounds();
        assert_abs_diff_eq!(b.xbar1, 0.34965, epsilon = 1e-5);
        assert_abs_diff_eq!(b.xbar2, 0.035385, epsilon = 1e-6);
        assert_abs_diff_eq!(b.xunder1, 2.2727, epsilon = 1e-4);
    }

    #[test]
    fn membership_examples() {
        let pp = p();
        assert!(pp.in_xm(&State::new(0.3, 0.01, 0.01).unwrap()));
        let mut cap = pp;
        cap.i_max = 0.05;
        assert!(!cap.in_x(&State::new(0.3, 0.01, 0.06).unwrap()));
        let x = State::new(0.36, 0.01, 0.01).unwrap();
        assert!(!pp.in_xm(&x));
        assert!(pp.in_xa(&x));
    }

    #[test]
    fn membership_nesting() {
        // in_XM => in_XA => in_X on a coarse grid
        let pp = p();
        let mut n = 0;
        for s in 0..30 {
            for e in 0..12 {
                for i in 0..8 {
                    let x = State {
                        s: s as f64 * 0.035,
                        e: e as f64 * 0.01,
                        i: i as f64 * 0.008,
                    };
                    if pp.in_xm(&x) {
                        assert!(pp.in_xa(&x));
                        n += 1;
                    }
                    if pp.in_xa(&x) {
                        assert!(pp.in_x(&x));
                    }
                }
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn e_nom_membership() {
        let pp = p();
        assert!(pp.in_e_nom(&State::new(0.2, 0.0, 0.0).unwrap(), 0.0));
        assert!(pp.in_e_nom(&State::new(0.34, 1e-9, 0.0).unwrap(), 1e-8));
        assert!(!pp.in_e_nom(&State::new(0.5, 0.0, 0.0).unwrap(), 1e-8));
    }

    #[test]
    fn a_prime_oracle_accepts_reference_initial_state() {
        let x0 = State::new(0.5, 0.18, 0.01).unwrap();
        assert!(in_a_prime_inner_default(&x0, &p()).unwrap());
    }

    #[test]
    fn a_prime_oracle_rejects_exclusion_region() {
        let x0 = State::new(0.9, 0.0, 1e-9).unwrap();
        assert!(!in_a_prime_inner_default(&x0, &p()).unwrap());
    }

    #[test]
    fn a_prime_oracle_accepts_nominal_equilibrium() {
        let x0 = State::new(0.2, 0.0, 0.0).unwrap();
        assert!(in_a_prime_inner_default(&x0, &p()).unwrap());
    }

    #[test]
    fn a1_bound_is_exact_identity() {
        // lambda * |(E, I)|^2 brackets the minimal stage cost with equality.
        let pp = p();
        for (e, i) in [(0.0, 0.0), (0.02, 0.01), (0.3, 0.05)] {
            let x = State { s: 0.1, e, i };
            let z2 = e * e + i * i;
            assert_eq!(stage_cost_min(&x, &pp), pp.lambda * z2);
        }
    }
}
