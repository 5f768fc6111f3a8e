use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::problem::{FieldError, OdeProblem};

const MATRIX: [[f64; 3]; 3] = [
    [-9999.0, 1.0, 1.0],
    [9900.0, -100.0, 1.0],
    [98.0, 98.0, -2.0],
];

/// Linear stiff test `ẏ = A (y − g(t)) + ġ(t)` with exact solution `y = g`,
/// `g(t) = (cos 2πt, cos 4πt, cos 6πt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffLinearProblem {
    pub horizon: f64,
}

impl Default for StiffLinearProblem {
    fn default() -> Self {
        Self { horizon: 100.0 }
    }
}

impl StiffLinearProblem {
    pub fn matrix() -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, j| MATRIX[i][j])
    }

    pub fn forcing(t: f64) -> [f64; 3] {
        [(2.0 * PI * t).cos(), (4.0 * PI * t).cos(), (6.0 * PI * t).cos()]
    }

    pub fn forcing_derivative(t: f64) -> [f64; 3] {
        [
            -2.0 * PI * (2.0 * PI * t).sin(),
            -4.0 * PI * (4.0 * PI * t).sin(),
            -6.0 * PI * (6.0 * PI * t).sin(),
        ]
    }
}

impl OdeProblem for StiffLinearProblem {
    fn name(&self) -> &str {
        "stiff"
    }

    fn dim(&self) -> usize {
        3
    }

    fn field(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        let g = Self::forcing(t);
        let gd = Self::forcing_derivative(t);
        let d = [y[0] - g[0], y[1] - g[1], y[2] - g[2]];
        for i in 0..3 {
            dy[i] = MATRIX[i][0] * d[0] + MATRIX[i][1] * d[1] + MATRIX[i][2] * d[2] + gd[i];
        }
        Ok(())
    }

    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(Self::matrix())
    }

    fn linear_part(&self) -> Option<DMatrix<f64>> {
        Some(Self::matrix())
    }

    fn reference(&self, t: f64) -> Option<Vec<f64>> {
        Some(Self::forcing(t).to_vec())
    }

    fn initial_state(&self) -> Vec<f64> {
        Self::forcing(0.0).to_vec()
    }

    fn period(&self) -> f64 {
        self.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derivative_at_rest() {
        let p = StiffLinearProblem::default();
        let mut dy = [0.0; 3];
        p.field(0.0, &p.initial_state(), &mut dy).unwrap();
        assert_eq!(dy, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn derivative_at_quarter() {
        let p = StiffLinearProblem::default();
        let t = 0.25;
        let mut dy = [0.0; 3];
        p.field(t, &StiffLinearProblem::forcing(t), &mut dy).unwrap();
        assert_abs_diff_eq!(dy[0], -2.0 * PI, epsilon = 1e-10);
        assert_abs_diff_eq!(dy[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dy[2], 6.0 * PI, epsilon = 1e-10);
    }

    #[test]
    fn jacobian_row_sums() {
        let j = StiffLinearProblem::matrix();
        let sums: Vec<f64> = (0..3).map(|i| j.row(i).sum()).collect();
        assert_eq!(sums, vec![-9997.0, 9801.0, 194.0]);
    }
}
