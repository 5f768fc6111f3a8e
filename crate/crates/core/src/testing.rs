//! Small analytic problems shared by unit tests.

use nalgebra::DMatrix;

use crate::problem::{FieldError, OdeProblem};

/// `ẏ = v` for a constant `v` (zero when `v = 0`).
pub struct ConstantField(pub Vec<f64>);

impl OdeProblem for ConstantField {
    fn name(&self) -> &str {
        "constant"
    }
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn field(&self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        dy.copy_from_slice(&self.0);
        Ok(())
    }
    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.0.len(), self.0.len()))
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.0.len()]
    }
    fn period(&self) -> f64 {
        1.0
    }
}

/// `ẏ = A y`.
pub struct Linear(pub DMatrix<f64>);

impl Linear {
    pub fn scalar(lambda: f64) -> Self {
        Self(DMatrix::from_element(1, 1, lambda))
    }
}

impl OdeProblem for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn field(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        for (i, d) in dy.iter_mut().enumerate() {
            *d = (0..y.len()).map(|j| self.0[(i, j)] * y[j]).sum();
        }
        Ok(())
    }
    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.0.clone())
    }
    fn linear_part(&self) -> Option<DMatrix<f64>> {
        Some(self.0.clone())
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![1.0; self.0.nrows()]
    }
    fn period(&self) -> f64 {
        1.0
    }
}

/// Scalar `ẏ = Σ a_d t^d`, independent of `y`.
pub struct TimePolynomial(pub Vec<f64>);

impl TimePolynomial {
    pub fn antiderivative(&self, t: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(d, a)| a * t.powi(d as i32 + 1) / (d as f64 + 1.0))
            .sum()
    }
}

impl OdeProblem for TimePolynomial {
    fn name(&self) -> &str {
        "time-polynomial"
    }
    fn dim(&self) -> usize {
        1
    }
    fn field(&self, t: f64, _y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        dy[0] = self.0.iter().rev().fold(0.0, |acc, a| acc * t + a);
        Ok(())
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn period(&self) -> f64 {
        1.0
    }
}
