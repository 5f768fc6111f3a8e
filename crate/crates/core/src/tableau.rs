//! HBVM(k,s) coefficient matrices.
//!
//! For a `k`-node Gauss-Legendre rule `(c, b)` and degree `s`:
//!
//! * `Ps[i][j] = P_j(c_i)` and `Is[i][j] = ∫₀^{c_i} P_j`, both `k × s`;
//! * `Omega = diag(b)`;
//! * `Xs = Psᵀ Omega Is`, which for `k >= s` is the tridiagonal matrix with `Xs[0][0] = ξ_0`,
//!   `Xs[i][i-1] = ξ_i` and `Xs[i-1][i] = −ξ_i`;
//! * the Runge-Kutta matrix `A = Is Psᵀ Omega`.
//!
//! The stage solver works with the factored form and never needs `A`; it is built
//! lazily for tests and tableau export.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, Schur};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::legendre::{gauss_rule, LegendreBasis, QuadratureRule};

/// `ξ_i = 1 / (2 √|4i² − 1|)` for `i = 0 .. s`.
pub fn xi_entries(s: usize) -> Vec<f64> {
    (0..s)
        .map(|i| {
            let i = i as f64;
            1.0 / (2.0 * (4.0 * i * i - 1.0).abs().sqrt())
        })
        .collect()
}

/// The closed-form `Xs`.
pub fn xs_matrix(s: usize) -> DMatrix<f64> {
    let xi = xi_entries(s);
    let mut xs = DMatrix::zeros(s, s);
    if s > 0 {
        xs[(0, 0)] = xi[0];
    }
    for i in 1..s {
        xs[(i, i - 1)] = xi[i];
        xs[(i - 1, i)] = -xi[i];
    }
    xs
}

/// Smallest modulus over the (complex) spectrum of a square matrix.
pub fn min_eigenvalue_modulus(xs: &DMatrix<f64>) -> Result<f64> {
    if !xs.is_square() || xs.nrows() == 0 {
        return Err(Error::Eigensolver(format!(
            "expected a non-empty square matrix, got {}x{}",
            xs.nrows(),
            xs.ncols()
        )));
    }
    let schur = Schur::try_new(xs.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigensolver("Schur iteration did not converge".into()))?;
    schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::Eigensolver("empty spectrum".into()))
}

/// Structural data of an HBVM(k,s) method.
#[derive(Debug)]
pub struct HbvmCoefficients {
    s: usize,
    k: usize,
    rule: QuadratureRule,
    ps: DMatrix<f64>,
    is: DMatrix<f64>,
    pt_omega: DMatrix<f64>,
    xs: DMatrix<f64>,
    xs_inverse: DMatrix<f64>,
    xi: Vec<f64>,
    rho_s: f64,
    butcher: OnceLock<DMatrix<f64>>,
}

impl HbvmCoefficients {
    pub fn new(s: usize, k: usize) -> Result<Self> {
        if s == 0 || s > k {
            return Err(Error::InvalidParameters { s, k });
        }
        let rule = gauss_rule(k)?;
        let mut ps = DMatrix::zeros(k, s);
        let mut is = DMatrix::zeros(k, s);
        let mut row_p = vec![0.0; s];
        let mut row_i = vec![0.0; s];
        for (i, &c) in rule.nodes().iter().enumerate() {
            LegendreBasis::eval_all(c, &mut row_p);
            LegendreBasis::integral_all(c, &mut row_i);
            for j in 0..s {
                ps[(i, j)] = row_p[j];
                is[(i, j)] = row_i[j];
            }
        }
        let mut pt_omega = ps.transpose();
        for (i, &b) in rule.weights().iter().enumerate() {
            pt_omega.column_mut(i).scale_mut(b);
        }
        let xs = xs_matrix(s);
        let xs_inverse = xs
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularMatrix("Xs"))?;
        let rho_s = min_eigenvalue_modulus(&xs)?;
        Ok(Self {
            s,
            k,
            rule,
            ps,
            is,
            pt_omega,
            xs,
            xs_inverse,
            xi: xi_entries(s),
            rho_s,
            butcher: OnceLock::new(),
        })
    }

    /// The s-stage Gauss collocation method, HBVM(s,s).
    pub fn gauss(s: usize) -> Result<Self> {
        Self::new(s, s)
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn nodes(&self) -> &[f64] {
        self.rule.nodes()
    }

    pub fn weights(&self) -> &[f64] {
        self.rule.weights()
    }

    pub fn ps(&self) -> &DMatrix<f64> {
        &self.ps
    }

    pub fn is(&self) -> &DMatrix<f64> {
        &self.is
    }

    pub fn omega(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(self.rule.weights()))
    }

    /// `Psᵀ Omega`, `s × k`.
    pub fn pt_omega(&self) -> &DMatrix<f64> {
        &self.pt_omega
    }

    pub fn xs(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn xs_inverse(&self) -> &DMatrix<f64> {
        &self.xs_inverse
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn rho_s(&self) -> f64 {
        self.rho_s
    }

    /// `A = Is Psᵀ Omega`, built on first use.
    pub fn butcher_matrix(&self) -> &DMatrix<f64> {
        self.butcher.get_or_init(|| &self.is * &self.pt_omega)
    }

    pub fn tableau(&self) -> ButcherTableau {
        let a = self.butcher_matrix();
        ButcherTableau {
            s: self.s,
            k: self.k,
            c: self.nodes().to_vec(),
            b: self.weights().to_vec(),
            a: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

/// Exportable `(c, A, b)` of an HBVM(k,s) method.
#[derive(Debug, Clone, Serialize)]
pub struct ButcherTableau {
    pub s: usize,
    pub k: usize,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub a: Vec<Vec<f64>>,
}

impl ButcherTableau {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tableau serialization")
    }
}

/// Thread-safe memo of coefficient sets keyed by `(s, k)`.
#[derive(Debug, Default)]
pub struct CoefficientCache {
    entries: Mutex<HashMap<(usize, usize), Arc<HbvmCoefficients>>>,
}

impl CoefficientCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, s: usize, k: usize) -> Result<Arc<HbvmCoefficients>> {
        if let Some(c) = self.entries.lock().unwrap().get(&(s, k)) {
            return Ok(Arc::clone(c));
        }
        // built outside the lock; a racing insert just wins
        let built = Arc::new(HbvmCoefficients::new(s, k)?);
        let mut map = self.entries.lock().unwrap();
        Ok(Arc::clone(map.entry((s, k)).or_insert(built)))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
