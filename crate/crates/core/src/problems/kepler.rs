use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::problem::{FieldError, OdeProblem};

/// Planar Kepler problem, state `(q₁, q₂, p₁, p₂)`, `H = ½‖p‖² − 1/‖q‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerProblem {
    pub eccentricity: f64,
}

impl Default for KeplerProblem {
    fn default() -> Self {
        Self { eccentricity: 0.5 }
    }
}

impl KeplerProblem {
    pub fn new(eccentricity: f64) -> Self {
        assert!((0.0..1.0).contains(&eccentricity), "eccentricity must lie in [0, 1)");
        Self { eccentricity }
    }

    pub fn hamiltonian(y: &[f64]) -> f64 {
        let r = y[0].hypot(y[1]);
        0.5 * (y[2] * y[2] + y[3] * y[3]) - 1.0 / r
    }

    pub fn angular_momentum(y: &[f64]) -> f64 {
        y[0] * y[3] - y[2] * y[1]
    }

    /// Second component of the Lenz vector.
    pub fn lenz(y: &[f64]) -> f64 {
        let r = y[0].hypot(y[1]);
        -y[2] * Self::angular_momentum(y) - y[1] / r
    }

    /// `∇H = (q/‖q‖³, p)`.
    pub fn hamiltonian_gradient(y: &[f64]) -> [f64; 4] {
        let r = y[0].hypot(y[1]);
        let r3 = r * r * r;
        [y[0] / r3, y[1] / r3, y[2], y[3]]
    }
}

impl OdeProblem for KeplerProblem {
    fn name(&self) -> &str {
        "kepler"
    }

    fn dim(&self) -> usize {
        4
    }

    fn field(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        let r2 = y[0] * y[0] + y[1] * y[1];
        if r2 == 0.0 {
            return Err(FieldError("Kepler field is singular at q = 0".into()));
        }
        let inv_r3 = 1.0 / (r2 * r2.sqrt());
        dy[0] = y[2];
        dy[1] = y[3];
        dy[2] = -y[0] * inv_r3;
        dy[3] = -y[1] * inv_r3;
        Ok(())
    }

    fn jacobian(&self, _t: f64, y: &[f64]) -> Option<DMatrix<f64>> {
        let r2 = y[0] * y[0] + y[1] * y[1];
        let r = r2.sqrt();
        let inv_r3 = 1.0 / (r2 * r);
        let inv_r5 = inv_r3 / r2;
        let mut j = DMatrix::zeros(4, 4);
        j[(0, 2)] = 1.0;
        j[(1, 3)] = 1.0;
        // −‖q‖⁻³ (I − 3 q qᵀ / ‖q‖²)
        j[(2, 0)] = -inv_r3 + 3.0 * y[0] * y[0] * inv_r5;
        j[(2, 1)] = 3.0 * y[0] * y[1] * inv_r5;
        j[(3, 0)] = 3.0 * y[1] * y[0] * inv_r5;
        j[(3, 1)] = -inv_r3 + 3.0 * y[1] * y[1] * inv_r5;
        Some(j)
    }

    fn invariants(&self, y: &[f64]) -> Vec<(&'static str, f64)> {
        vec![
            ("H", Self::hamiltonian(y)),
            ("M", Self::angular_momentum(y)),
            ("L", Self::lenz(y)),
        ]
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        y[0] != 0.0 || y[1] != 0.0
    }

    fn initial_state(&self) -> Vec<f64> {
        let e = self.eccentricity;
        vec![1.0 - e, 0.0, 0.0, ((1.0 + e) / (1.0 - e)).sqrt()]
    }

    fn period(&self) -> f64 {
        2.0 * PI
    }
}
