//! Receding-horizon control of the constrained SEIR epidemic model without
//! terminal cost or terminal constraint, together with the numerical
//! certification checks backing the scheme (set invariance, cost
//! controllability, and relaxed Lyapunov decrease).

pub mod certify;
pub mod error;
pub mod integrate;
pub mod model;
pub mod mpc;
pub mod ocp;

pub use certify::{CertReport, DecayFit};
pub use error::{Error, Result};
pub use integrate::{ControlSignal, Method, SimEvents, Trajectory};
pub use model::{ControlInput, DerivedBounds, ModelParams, State};
pub use mpc::{MpcConfig, MpcLog};
pub use ocp::{OcpSolution, OcpSpec, SolveStatus, SolverOptions};
