//! The ODE problem abstraction consumed by the stage solver and integrator.

use std::fmt;

use nalgebra::DMatrix;

/// Failure inside a user vector field (for example a logarithm of a non-positive value).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError(pub String);

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for FieldError {}

/// `ẏ = f(t, y)` together with the metadata the experiments need.
///
/// Time is threaded explicitly; the Jacobian is taken with respect to `y` only.
pub trait OdeProblem: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `m`.
    fn dim(&self) -> usize;

    fn field(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError>;

    /// Analytic `∂f/∂y`, if available.
    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Constant leading linear part, for problems of the form `L y + N(t, y)`.
    fn linear_part(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Named conserved quantities evaluated at `y`.
    fn invariants(&self, _y: &[f64]) -> Vec<(&'static str, f64)> {
        Vec::new()
    }

    /// Exact solution, when known in closed form.
    fn reference(&self, _t: f64) -> Option<Vec<f64>> {
        None
    }

    /// Admissible states; stages outside the domain abort the step.
    fn in_domain(&self, _y: &[f64]) -> bool {
        true
    }

    fn initial_state(&self) -> Vec<f64>;

    /// Period of the reference orbit (or the integration horizon for non-periodic tests).
    fn period(&self) -> f64;

    /// Reference state after `p` periods: the exact solution if known, otherwise the initial state.
    fn reference_at_period(&self, p: usize) -> Vec<f64> {
        self.reference(p as f64 * self.period())
            .unwrap_or_else(|| self.initial_state())
    }
}

/// Forward-difference Jacobian with increment `√u (1 + |y_i|)` per component.
pub fn finite_difference_jacobian(
    problem: &dyn OdeProblem,
    t: f64,
    y: &[f64],
) -> Result<DMatrix<f64>, FieldError> {
    let m = y.len();
    let mut f0 = vec![0.0; m];
    problem.field(t, y, &mut f0)?;
    let mut jac = DMatrix::zeros(m, m);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; m];
    let root_eps = f64::EPSILON.sqrt();
    for j in 0..m {
        let inc = root_eps * (1.0 + y[j].abs());
        yp[j] = y[j] + inc;
        let actual = yp[j] - y[j];
        problem.field(t, &yp, &mut fp)?;
        for i in 0..m {
            jac[(i, j)] = (fp[i] - f0[i]) / actual;
        }
        yp[j] = y[j];
    }
    Ok(jac)
}

/// Analytic Jacobian when the problem has one, finite differences otherwise.
pub fn jacobian_or_fd(
    problem: &dyn OdeProblem,
    t: f64,
    y: &[f64],
) -> Result<DMatrix<f64>, FieldError> {
    match problem.jacobian(t, y) {
        Some(j) => Ok(j),
        None => finite_difference_jacobian(problem, t, y),
    }
}
