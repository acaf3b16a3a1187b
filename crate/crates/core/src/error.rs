use crate::model::State;

/// Errors shared across the library.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("control input outside admissible box: beta={beta}, gamma={gamma}")]
    InputOutsideU { beta: f64, gamma: f64 },

    #[error("simulation budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("optimal control problem infeasible: {0}")]
    Infeasible(String),

    #[error("MPC loop infeasible at iteration {iteration} (t = {time} days) from state ({s}, {e}, {i})")]
    MpcInfeasibleAt {
        iteration: usize,
        time: f64,
        s: f64,
        e: f64,
        i: f64,
    },

    #[error("maximum simulated time of {max_days} days exceeded before termination criterion was met")]
    MaxSimDaysExceeded { max_days: f64 },

    #[error("state constraint violated at t = {time} days: I = {i} > I_max")]
    ConstraintViolation { time: f64, i: f64 },

    #[error("threshold {threshold} never reached by trajectory")]
    ThresholdNotReached { threshold: f64 },

    #[error("no active constraint at state ({}, {}, {})", .0.s, .0.e, .0.i)]
    NoActiveConstraint(State),

    #[error("decay fit failed: {0}")]
    FitFailure(String),

    #[error("Lyapunov monitor undefined: every iteration has vanishing stage-cost integral")]
    VacuousLyapunovCheck,
}

pub type Result<T> = std::result::Result<T, Error>;
