use crate::problem::{FieldError, OdeProblem};

/// Three-species Lotka-Volterra system in Poisson form `ẏ = B(y) ∇H(y)`.
///
/// `H = ab y₁ + y₂ − a y₃ + ν ln y₂ − μ ln y₃` and the Casimir
/// `C = ab ln y₁ − b ln y₂ + ln y₃` are both conserved when `abc = −1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterraProblem {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub nu: f64,
    pub mu: f64,
    pub y0: [f64; 3],
    pub period: f64,
}

impl Default for LotkaVolterraProblem {
    fn default() -> Self {
        Self {
            a: -2.0,
            b: -1.0,
            c: -0.5,
            nu: 1.0,
            mu: 2.0,
            y0: [1.0, 1.9, 0.5],
            period: 2.878_130_103_817,
        }
    }
}

impl LotkaVolterraProblem {
    pub fn poisson_matrix(&self, y: &[f64]) -> [[f64; 3]; 3] {
        let (b, c) = (self.b, self.c);
        let y12 = c * y[0] * y[1];
        let y13 = b * c * y[0] * y[2];
        let y23 = y[1] * y[2];
        [[0.0, y12, y13], [-y12, 0.0, -y23], [-y13, y23, 0.0]]
    }

    pub fn hamiltonian_gradient(&self, y: &[f64]) -> [f64; 3] {
        [self.a * self.b, 1.0 + self.nu / y[1], -self.a - self.mu / y[2]]
    }

    pub fn casimir_gradient(&self, y: &[f64]) -> [f64; 3] {
        [self.a * self.b / y[0], -self.b / y[1], 1.0 / y[2]]
    }

    pub fn hamiltonian(&self, y: &[f64]) -> f64 {
        self.a * self.b * y[0] + y[1] - self.a * y[2] + self.nu * y[1].ln() - self.mu * y[2].ln()
    }

    pub fn casimir(&self, y: &[f64]) -> f64 {
        self.a * self.b * y[0].ln() - self.b * y[1].ln() + y[2].ln()
    }
}

impl OdeProblem for LotkaVolterraProblem {
    fn name(&self) -> &str {
        "lotka-volterra"
    }

    fn dim(&self) -> usize {
        3
    }

    fn field(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        if y[1] == 0.0 || y[2] == 0.0 {
            return Err(FieldError(format!(
                "Lotka-Volterra field is singular at ({}, {}, {})",
                y[0], y[1], y[2]
            )));
        }
        let bm = self.poisson_matrix(y);
        let g = self.hamiltonian_gradient(y);
        for (i, row) in bm.iter().enumerate() {
            dy[i] = row[0] * g[0] + row[1] * g[1] + row[2] * g[2];
        }
        Ok(())
    }

    fn invariants(&self, y: &[f64]) -> Vec<(&'static str, f64)> {
        vec![("H", self.hamiltonian(y)), ("C", self.casimir(y))]
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        y.iter().all(|&v| v > 0.0)
    }

    fn initial_state(&self) -> Vec<f64> {
        self.y0.to_vec()
    }

    fn period(&self) -> f64 {
        self.period
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parameters_are_consistent() {
        let p = LotkaVolterraProblem::default();
        assert_abs_diff_eq!(p.a * p.b * p.c, -1.0);
    }

    #[test]
    fn initial_invariants() {
        let p = LotkaVolterraProblem::default();
        let y0 = p.initial_state();
        assert_abs_diff_eq!(p.casimir(&y0), 1.9f64.ln() + 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.casimir(&y0), -0.051_293_294_387_550_5, epsilon = 1e-12);
        let h = 2.0 + 1.9 + 1.0 + 1.9f64.ln() - 2.0 * 0.5f64.ln();
        assert_abs_diff_eq!(p.hamiltonian(&y0), h, epsilon = 1e-14);
        assert_abs_diff_eq!(p.hamiltonian(&y0), 6.928_148_247_3, epsilon = 1e-9);
    }

    #[test]
    fn poisson_matrix_is_skew() {
        let p = LotkaVolterraProblem::default();
        let bm = p.poisson_matrix(&[0.3, 2.0, 1.1]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(bm[i][j], -bm[j][i]);
            }
        }
    }

    #[test]
    fn singular_state_is_an_error() {
        let p = LotkaVolterraProblem::default();
        let mut dy = [0.0; 3];
        assert!(p.field(0.0, &[1.0, 0.0, 1.0], &mut dy).is_err());
        assert!(!p.in_domain(&[1.0, -0.1, 1.0]));
    }
}
