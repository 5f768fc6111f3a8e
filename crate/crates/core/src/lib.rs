//! Hamiltonian Boundary Value Methods HBVM(k,s) used as spectral methods in time.
//!
//! The crate is organised bottom-up:
//!
//! * [`legendre`]: orthonormal shifted Legendre basis and Gauss-Legendre rules on `[0, 1]`;
//! * [`tableau`]: the structural matrices of HBVM(k,s) and the equivalent Butcher tableau;
//! * [`solver`]: fixed-point, simplified Newton and blended iterations for the stage problem;
//! * [`integrator`]: fixed-step time stepping, dense output and period sampling;
//! * [`spectral`]: choice of `(s, k)` from the coefficient decay and `(κ, ρ)` estimation;
//! * [`problems`]: Kepler, Lotka-Volterra and stiff linear benchmark problems;
//! * [`harness`]: experiment specs, reports, convergence tables and figure data.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod integrator;
pub mod legendre;
pub mod problem;
pub mod problems;
pub mod solver;
pub mod spectral;
pub mod tableau;
#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use integrator::{hbvm_step, integrate, DenseOutput, IntegrationReport, Observer, PeriodSampler, StepResult, Stepper};
pub use legendre::{gauss_rule, LegendreBasis, QuadratureRule};
pub use problem::{FieldError, OdeProblem};
pub use solver::{IterationConfig, JacobianPolicy, Scheme, StageSolver, StageVector};
pub use spectral::{calibrate_order, estimate_decay, k_for_s, select_order, DecayEstimate, SpectralConfig};
pub use tableau::{CoefficientCache, HbvmCoefficients};
