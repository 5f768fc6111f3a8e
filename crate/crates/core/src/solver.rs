//! Nonlinear solvers for the HBVM stage problem
//!
//! ```text
//! F(γ) = γ − (Psᵀ Omega ⊗ I_m) f(e ⊗ y0 + h (Is ⊗ I_m) γ) = 0
//! ```
//!
//! whose unknown is the block vector `γ = (γ_0, …, γ_{s−1})` of Legendre coefficients of
//! the field along the collocation polynomial. The problem has `s` blocks of size `m`
//! independently of the node count `k`.
//!
//! Three iterations are provided, all started from `γ = 0`:
//!
//! * fixed point, `γ ← Psᵀ Omega f(Y(γ))`;
//! * simplified Newton with the `sm × sm` matrix `I − h Xs ⊗ J`;
//! * blended iteration, which needs only the `m × m` factorization of
//!   `I − h ρ_s J`, with `ρ_s` the smallest eigenvalue modulus of `Xs`.
//!
//! Kronecker products are applied block-wise and never formed.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{jacobian_or_fd, OdeProblem};
use crate::tableau::HbvmCoefficients;

/// Residual growth, relative to `‖F(0)‖`, beyond which a growing iteration is declared divergent.
pub const DIVERGENCE_GROWTH: f64 = 1e6;

/// Nonlinear iteration used for the stage equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    FixedPoint,
    SimplifiedNewton,
    Blended,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::FixedPoint => "fixed-point",
            Scheme::SimplifiedNewton => "newton",
            Scheme::Blended => "blended",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed-point" | "fixed" => Ok(Scheme::FixedPoint),
            "newton" | "simplified-newton" => Ok(Scheme::SimplifiedNewton),
            "blended" => Ok(Scheme::Blended),
            other => Err(Error::InvalidConfig(format!("unknown iteration scheme '{other}'"))),
        }
    }
}

/// Where the Jacobian used by the Newton-type iterations comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianPolicy {
    /// `f'(y0)` at the start of every step.
    FreshEachStep,
    /// The problem's constant linear part, factored once.
    FrozenLinearPart,
    /// `f'(y0)` of the first step, reused for the whole run.
    FrozenFirstStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationConfig {
    pub scheme: Scheme,
    /// Relative stopping threshold, scaled by `max(1, ‖γ‖_max)`.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub jacobian_policy: JacobianPolicy,
    /// An increment that stops shrinking is accepted as converged once it is below
    /// `stall_tolerance · max(1, ‖γ‖_max)`: the iteration has reached its round-off floor.
    pub stall_tolerance: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Blended,
            residual_tolerance: 1e-16,
            max_iterations: 100,
            jacobian_policy: JacobianPolicy::FreshEachStep,
            stall_tolerance: 1e-12,
        }
    }
}

impl IterationConfig {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self {
            scheme,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidConfig("residual tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.stall_tolerance >= self.residual_tolerance) {
            return Err(Error::InvalidConfig(
                "stall tolerance must not be below the residual tolerance".into(),
            ));
        }
        Ok(())
    }
}

/// Block vector `(γ_0, …, γ_{s−1})`, each block of length `m`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct StageVector {
    data: Vec<f64>,
    s: usize,
    m: usize,
}

impl StageVector {
    pub fn zeros(s: usize, m: usize) -> Self {
        Self {
            data: vec![0.0; s * m],
            s,
            m,
        }
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Self {
        let s = blocks.len();
        let m = blocks.first().map_or(0, Vec::len);
        assert!(blocks.iter().all(|b| b.len() == m), "ragged stage blocks");
        Self {
            data: blocks.concat(),
            s,
            m,
        }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn block_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.data)
    }

    /// `‖γ_j‖_∞` for each block.
    pub fn block_norms(&self) -> Vec<f64> {
        (0..self.s).map(|j| max_norm(self.block(j))).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(M ⊗ I_m) self` for an `s × s` matrix `M`.
    pub fn kron_apply(&self, mat: &DMatrix<f64>) -> StageVector {
        let mut out = StageVector::zeros(self.s, self.m);
        for i in 0..self.s {
            let dst = out.block_mut(i);
            for j in 0..self.s {
                let a = mat[(i, j)];
                if a != 0.0 {
                    for (d, v) in dst.iter_mut().zip(self.block(j)) {
                        *d += a * v;
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Stage states `Y_i = y0 + h Σ_j Is[i][j] γ_j`, laid out as `k` blocks of length `m`.
pub fn stage_states(gamma: &StageVector, y0: &[f64], h: f64, coeffs: &HbvmCoefficients) -> Vec<f64> {
    let (k, s, m) = (coeffs.k(), coeffs.s(), y0.len());
    let is = coeffs.is();
    let mut stages = Vec::with_capacity(k * m);
    for i in 0..k {
        let start = stages.len();
        stages.extend_from_slice(y0);
        let yi = &mut stages[start..];
        for j in 0..s {
            let a = h * is[(i, j)];
            for (y, g) in yi.iter_mut().zip(gamma.block(j)) {
                *y += a * g;
            }
        }
    }
    stages
}

/// `Psᵀ Omega f(Y(γ))`, i.e. the quadrature estimate of the Legendre coefficients.
fn projected_field(
    gamma: &StageVector,
    y0: &[f64],
    h: f64,
    t0: f64,
    coeffs: &HbvmCoefficients,
    problem: &dyn OdeProblem,
    evals: &mut usize,
) -> Result<StageVector> {
    let m = y0.len();
    let stages = stage_states(gamma, y0, h, coeffs);
    let pt_omega = coeffs.pt_omega();
    let mut out = StageVector::zeros(coeffs.s(), m);
    let mut fi = vec![0.0; m];
    for (i, c) in coeffs.nodes().iter().enumerate() {
        let yi = &stages[i * m..(i + 1) * m];
        problem
            .field(t0 + c * h, yi, &mut fi)
            .map_err(|e| Error::FieldEvaluation {
                stage: i,
                reason: e.0,
            })?;
        *evals += 1;
        for j in 0..coeffs.s() {
            let w = pt_omega[(j, i)];
            for (d, f) in out.block_mut(j).iter_mut().zip(&fi) {
                *d += w * f;
            }
        }
    }
    Ok(out)
}

/// `F(γ)` of the discrete stage problem.
pub fn residual(
    gamma: &StageVector,
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    problem: &dyn OdeProblem,
    t0: f64,
) -> Result<StageVector> {
    let mut evals = 0;
    let mut f = projected_field(gamma, y0, h, t0, coeffs, problem, &mut evals)?;
    for (r, g) in f.as_mut_slice().iter_mut().zip(gamma.as_slice()) {
        *r = g - *r;
    }
    Ok(f)
}

/// Factored `Σ⁻¹ = I − h ρ_s J` plus the data needed by one blended sweep.
#[derive(Debug, Clone)]
pub struct BlendedWorkspace {
    sigma_factorization: LU<f64, Dyn, Dyn>,
    xs_inverse: DMatrix<f64>,
    rho_s: f64,
    h: f64,
    s: usize,
}

impl BlendedWorkspace {
    pub fn new(jacobian: &DMatrix<f64>, h: f64, coeffs: &HbvmCoefficients) -> Result<Self> {
        let m = jacobian.nrows();
        let rho_s = coeffs.rho_s();
        let sigma_inv = DMatrix::identity(m, m) - jacobian * (h * rho_s);
        let lu = sigma_inv.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularMatrix("I - h rho_s J"));
        }
        Ok(Self {
            sigma_factorization: lu,
            xs_inverse: coeffs.xs_inverse().clone(),
            rho_s,
            h,
            s: coeffs.s(),
        })
    }

    pub fn rho_s(&self) -> f64 {
        self.rho_s
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn matches(&self, h: f64, coeffs: &HbvmCoefficients) -> bool {
        self.h == h && self.s == coeffs.s() && self.rho_s == coeffs.rho_s()
    }

    fn apply_sigma(&self, v: &mut StageVector) {
        for j in 0..v.s() {
            let block = v.block_mut(j);
            let x = self
                .sigma_factorization
                .solve(&DVector::from_column_slice(block))
                .expect("factorization checked invertible");
            block.copy_from_slice(x.as_slice());
        }
    }

    /// Blended correction for right-hand side `η = −F(γ)`:
    /// `δ = (I ⊗ Σ)[η₁ + (I ⊗ Σ)(η − η₁)]`, `η₁ = ρ_s (Xs⁻¹ ⊗ I) η`.
    pub fn correction(&self, eta: &StageVector) -> StageVector {
        let mut eta1 = eta.kron_apply(&self.xs_inverse);
        eta1.as_mut_slice().iter_mut().for_each(|v| *v *= self.rho_s);
        let mut w = eta.clone();
        for (a, b) in w.as_mut_slice().iter_mut().zip(eta1.as_slice()) {
            *a -= b;
        }
        self.apply_sigma(&mut w);
        for (a, b) in w.as_mut_slice().iter_mut().zip(eta1.as_slice()) {
            *a += b;
        }
        self.apply_sigma(&mut w);
        w
    }
}

/// Factored simplified Newton matrix `I − h Xs ⊗ J`.
#[derive(Debug, Clone)]
struct NewtonWorkspace {
    factorization: LU<f64, Dyn, Dyn>,
    h: f64,
    s: usize,
}

impl NewtonWorkspace {
    fn new(jacobian: &DMatrix<f64>, h: f64, coeffs: &HbvmCoefficients) -> Result<Self> {
        let (s, m) = (coeffs.s(), jacobian.nrows());
        let xs = coeffs.xs();
        let mut mat = DMatrix::identity(s * m, s * m);
        for bi in 0..s {
            for bj in 0..s {
                let x = h * xs[(bi, bj)];
                if x == 0.0 {
                    continue;
                }
                for a in 0..m {
                    for b in 0..m {
                        mat[(bi * m + a, bj * m + b)] -= x * jacobian[(a, b)];
                    }
                }
            }
        }
        let factorization = mat.lu();
        if !factorization.is_invertible() {
            return Err(Error::SingularMatrix("I - h Xs (x) J"));
        }
        Ok(Self { factorization, h, s })
    }

    fn correction(&self, eta: &StageVector) -> StageVector {
        let x = self
            .factorization
            .solve(&DVector::from_column_slice(eta.as_slice()))
            .expect("factorization checked invertible");
        let mut out = StageVector::zeros(eta.s(), eta.m());
        out.as_mut_slice().copy_from_slice(x.as_slice());
        out
    }
}

/// Counters accumulated over the lifetime of a [`StageSolver`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolverStats {
    pub solves: usize,
    pub iterations: usize,
    pub max_iterations: usize,
    pub field_evaluations: usize,
    pub factorizations: usize,
    pub jacobian_evaluations: usize,
}

/// Result of one stage solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub gamma: StageVector,
    pub iterations: usize,
    /// `‖F(γ^ℓ)‖_max` for every evaluated iterate.
    pub residual_history: Vec<f64>,
}

/// Stage solver with per-run workspace (factorizations, frozen Jacobian, counters).
///
/// One instance belongs to one integration run.
#[derive(Debug, Clone)]
pub struct StageSolver {
    config: IterationConfig,
    frozen_jacobian: Option<DMatrix<f64>>,
    blended: Option<BlendedWorkspace>,
    newton: Option<NewtonWorkspace>,
    stats: SolverStats,
}

impl StageSolver {
    pub fn new(config: IterationConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            frozen_jacobian: None,
            blended: None,
            newton: None,
            stats: SolverStats::default(),
        })
    }

    pub fn config(&self) -> &IterationConfig {
        &self.config
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    fn jacobian(&mut self, problem: &dyn OdeProblem, t0: f64, y0: &[f64]) -> Result<DMatrix<f64>> {
        let fd_error = |e: crate::problem::FieldError| Error::FieldEvaluation {
            stage: 0,
            reason: format!("Jacobian evaluation: {}", e.0),
        };
        match self.config.jacobian_policy {
            JacobianPolicy::FreshEachStep => {
                self.stats.jacobian_evaluations += 1;
                jacobian_or_fd(problem, t0, y0).map_err(fd_error)
            }
            JacobianPolicy::FrozenLinearPart => {
                if self.frozen_jacobian.is_none() {
                    let lin = problem.linear_part().ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "problem '{}' has no linear part to freeze",
                            problem.name()
                        ))
                    })?;
                    self.stats.jacobian_evaluations += 1;
                    self.frozen_jacobian = Some(lin);
                }
                Ok(self.frozen_jacobian.clone().unwrap())
            }
            JacobianPolicy::FrozenFirstStep => {
                if self.frozen_jacobian.is_none() {
                    self.stats.jacobian_evaluations += 1;
                    self.frozen_jacobian = Some(jacobian_or_fd(problem, t0, y0).map_err(fd_error)?);
                }
                Ok(self.frozen_jacobian.clone().unwrap())
            }
        }
    }

    fn needs_refactor(&self, h: f64, coeffs: &HbvmCoefficients) -> bool {
        if self.config.jacobian_policy == JacobianPolicy::FreshEachStep {
            return true;
        }
        match self.config.scheme {
            Scheme::Blended => !self.blended.as_ref().is_some_and(|w| w.matches(h, coeffs)),
            Scheme::SimplifiedNewton => !self
                .newton
                .as_ref()
                .is_some_and(|w| w.h == h && w.s == coeffs.s()),
            Scheme::FixedPoint => false,
        }
    }

    fn prepare(&mut self, problem: &dyn OdeProblem, t0: f64, y0: &[f64], h: f64, coeffs: &HbvmCoefficients) -> Result<()> {
        if self.config.scheme == Scheme::FixedPoint || !self.needs_refactor(h, coeffs) {
            return Ok(());
        }
        let jac = self.jacobian(problem, t0, y0)?;
        if jac.nrows() != y0.len() || jac.ncols() != y0.len() {
            return Err(Error::InvalidConfig(format!(
                "Jacobian is {}x{} for a state of dimension {}",
                jac.nrows(),
                jac.ncols(),
                y0.len()
            )));
        }
        match self.config.scheme {
            Scheme::Blended => self.blended = Some(BlendedWorkspace::new(&jac, h, coeffs)?),
            Scheme::SimplifiedNewton => self.newton = Some(NewtonWorkspace::new(&jac, h, coeffs)?),
            Scheme::FixedPoint => unreachable!(),
        }
        self.stats.factorizations += 1;
        Ok(())
    }

    /// Solves `F(γ) = 0` for one step from `(t0, y0)` with stepsize `h`.
    ///
    /// Stops when the increment or the residual drops below
    /// `residual_tolerance · max(1, ‖γ‖_max)`, or when the increment stops shrinking
    /// below the stall threshold. Fails when the residual grows three times in a row
    /// beyond [`DIVERGENCE_GROWTH`] times the starting residual `‖F(0)‖`, turns
    /// non-finite, or `max_iterations` is exhausted.
    ///
    /// Intermediate iterates may leave the problem's domain; only the converged stage
    /// states are checked against it.
    pub fn solve(
        &mut self,
        problem: &dyn OdeProblem,
        t0: f64,
        y0: &[f64],
        h: f64,
        coeffs: &HbvmCoefficients,
    ) -> Result<SolveOutcome> {
        if !(h > 0.0) {
            return Err(Error::InvalidConfig(format!("stepsize must be positive, got {h}")));
        }
        if y0.len() != problem.dim() {
            return Err(Error::InvalidConfig(format!(
                "state has dimension {}, problem expects {}",
                y0.len(),
                problem.dim()
            )));
        }
        self.prepare(problem, t0, y0, h, coeffs)?;
        self.stats.solves += 1;

        let cfg = self.config;
        let mut gamma = StageVector::zeros(coeffs.s(), y0.len());
        let mut history = Vec::new();
        let mut prev_residual = f64::INFINITY;
        let mut prev_increment = f64::INFINITY;
        let mut growth = 0;

        for it in 1..=cfg.max_iterations {
            let mut evals = 0;
            let projected = projected_field(&gamma, y0, h, t0, coeffs, problem, &mut evals);
            self.stats.field_evaluations += evals;
            let projected = projected?;
            // η = −F(γ) = Psᵀ Omega f(Y) − γ
            let mut eta = projected;
            for (e, g) in eta.as_mut_slice().iter_mut().zip(gamma.as_slice()) {
                *e -= g;
            }
            let res = eta.max_norm();
            history.push(res);
            let scale = gamma.max_norm().max(1.0);
            if !res.is_finite() {
                return self.diverged(it, res);
            }
            if it > 1 && res <= cfg.residual_tolerance * scale {
                return Self::check_domain(self.converged(gamma, it - 1, history), problem, y0, h, coeffs);
            }
            growth = if res > prev_residual { growth + 1 } else { 0 };
            // the blended iteration matrix is far from normal for large s (transient growth
            // of 1e4 before contraction is typical on stiff problems), so growth only counts
            // once it has left the starting residual far behind
            if growth >= 3 && res > DIVERGENCE_GROWTH * history[0] && res > cfg.stall_tolerance * scale {
                return self.diverged(it, res);
            }
            prev_residual = res;

            let delta = match cfg.scheme {
                Scheme::FixedPoint => eta,
                Scheme::SimplifiedNewton => self.newton.as_ref().unwrap().correction(&eta),
                Scheme::Blended => self.blended.as_ref().unwrap().correction(&eta),
            };
            for (g, d) in gamma.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *g += d;
            }
            let inc = delta.max_norm();
            let scale = gamma.max_norm().max(1.0);
            if !inc.is_finite() || !gamma.is_finite() {
                return self.diverged(it, res);
            }
            if inc <= cfg.residual_tolerance * scale {
                return Self::check_domain(self.converged(gamma, it, history), problem, y0, h, coeffs);
            }
            if inc >= prev_increment && inc <= cfg.stall_tolerance * scale {
                return Self::check_domain(self.converged(gamma, it, history), problem, y0, h, coeffs);
            }
            prev_increment = inc;
        }
        let last = history.last().copied().unwrap_or(f64::NAN);
        self.diverged(cfg.max_iterations, last)
    }

    fn converged(&mut self, gamma: StageVector, iterations: usize, history: Vec<f64>) -> SolveOutcome {
        self.stats.iterations += iterations;
        self.stats.max_iterations = self.stats.max_iterations.max(iterations);
        SolveOutcome {
            gamma,
            iterations,
            residual_history: history,
        }
    }

    fn check_domain(outcome: SolveOutcome, problem: &dyn OdeProblem, y0: &[f64], h: f64, coeffs: &HbvmCoefficients) -> Result<SolveOutcome> {
        let m = y0.len();
        let stages = stage_states(&outcome.gamma, y0, h, coeffs);
        if let Some(i) = stages.chunks(m).position(|yi| !problem.in_domain(yi)) {
            return Err(Error::DomainViolation { stage: i });
        }
        Ok(outcome)
    }

    fn diverged(&mut self, iterations: usize, residual: f64) -> Result<SolveOutcome> {
        self.stats.iterations += iterations;
        Err(Error::Divergence {
            iterations,
            residual,
        })
    }
}

fn solve_with(
    scheme: Scheme,
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    problem: &dyn OdeProblem,
    config: &IterationConfig,
    t0: f64,
) -> Result<(StageVector, usize)> {
    let mut solver = StageSolver::new(IterationConfig { scheme, ..*config })?;
    let out = solver.solve(problem, t0, y0, h, coeffs)?;
    Ok((out.gamma, out.iterations))
}

/// One-shot fixed-point solve from `γ = 0`.
pub fn solve_fixed_point(
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    problem: &dyn OdeProblem,
    config: &IterationConfig,
    t0: f64,
) -> Result<(StageVector, usize)> {
    solve_with(Scheme::FixedPoint, y0, h, coeffs, problem, config, t0)
}

/// One-shot simplified Newton solve with `J = f'(y0)` (or the policy's frozen matrix).
pub fn solve_simplified_newton(
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    problem: &dyn OdeProblem,
    config: &IterationConfig,
    t0: f64,
) -> Result<(StageVector, usize)> {
    solve_with(Scheme::SimplifiedNewton, y0, h, coeffs, problem, config, t0)
}

/// One-shot blended solve.
pub fn solve_blended(
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    problem: &dyn OdeProblem,
    config: &IterationConfig,
    t0: f64,
) -> Result<(StageVector, usize)> {
    solve_with(Scheme::Blended, y0, h, coeffs, problem, config, t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{KeplerProblem, StiffLinearProblem};
    use crate::testing::{ConstantField, Linear};
    use approx::assert_abs_diff_eq;

    fn gauss(s: usize, k: usize) -> HbvmCoefficients {
        HbvmCoefficients::new(s, k).unwrap()
    }

    fn max_diff(a: &StageVector, b: &StageVector) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn residual_of_zero_field_vanishes() {
        let c = gauss(4, 6);
        let gamma = StageVector::zeros(4, 2);
        let f = residual(&gamma, &[1.0, 2.0], 0.3, &c, &ConstantField(vec![0.0, 0.0]), 0.0).unwrap();
        assert_eq!(f.max_norm(), 0.0);
    }

    #[test]
    fn residual_of_constant_field_at_exact_coefficients() {
        let v = vec![0.7, -1.3, 2.0];
        let c = gauss(5, 7);
        let mut gamma = StageVector::zeros(5, 3);
        gamma.block_mut(0).copy_from_slice(&v);
        let f = residual(&gamma, &[0.0; 3], 0.5, &c, &ConstantField(v), 0.0).unwrap();
        assert!(f.max_norm() <= 1e-14);
    }

    #[test]
    fn residual_of_scalar_linear_at_zero() {
        let (lambda, y0) = (-3.0, 0.8);
        let c = gauss(3, 5);
        let f = residual(&StageVector::zeros(3, 1), &[y0], 0.1, &c, &Linear::scalar(lambda), 0.0).unwrap();
        assert_abs_diff_eq!(f.block(0)[0], -lambda * y0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.block(1)[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.block(2)[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_field_converges_in_one_iteration() {
        let c = gauss(3, 5);
        let p = ConstantField(vec![0.0, 0.0]);
        for scheme in [Scheme::FixedPoint, Scheme::SimplifiedNewton, Scheme::Blended] {
            let cfg = IterationConfig::with_scheme(scheme);
            let (g, it) = solve_with(scheme, &[1.0, -1.0], 0.2, &c, &p, &cfg, 0.0).unwrap();
            assert_eq!(it, 1, "{scheme:?}");
            assert_eq!(g.max_norm(), 0.0);
        }
    }

    #[test]
    fn fixed_point_matches_linear_system_oracle() {
        let (lambda, y0, h, s) = (-1.5, 2.0, 0.05, 4);
        let c = gauss(s, s + 2);
        let (g, _) = solve_fixed_point(&[y0], h, &c, &Linear::scalar(lambda), &IterationConfig::default(), 0.0).unwrap();
        // (I − hλ Xs) γ = λ y0 e₁
        let mut mat = DMatrix::identity(s, s) - xs_oracle(s) * (h * lambda);
        let mut rhs = DVector::zeros(s);
        rhs[0] = lambda * y0;
        let x = mat.clone().lu().solve(&rhs).unwrap();
        for j in 0..s {
            assert_abs_diff_eq!(g.block(j)[0], x[j], epsilon = 1e-13);
        }
        mat.fill(0.0);
    }

    fn xs_oracle(s: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(s, s);
        x[(0, 0)] = 0.5;
        for i in 1..s {
            let xi = 1.0 / (2.0 * ((4 * i * i - 1) as f64).sqrt());
            x[(i, i - 1)] = xi;
            x[(i - 1, i)] = -xi;
        }
        x
    }

    #[test]
    fn fixed_point_diverges_on_stiff_scalar() {
        let c = gauss(4, 6);
        let err = solve_fixed_point(&[1.0], 1.0, &c, &Linear::scalar(-1e4), &IterationConfig::default(), 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
        assert!(err.is_divergence());
    }

    #[test]
    fn newton_solves_linear_problem_in_one_iteration() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, -1.0, -30.0]);
        let c = gauss(6, 8);
        // the default tolerance iterates down to the round-off floor; a looser one shows the
        // first correction is already exact
        let cfg = IterationConfig {
            residual_tolerance: 1e-13,
            ..IterationConfig::default()
        };
        let (_, it) = solve_simplified_newton(&[1.0, 0.5], 0.5, &c, &Linear(a), &cfg, 0.0).unwrap();
        assert_eq!(it, 1);
    }

    #[test]
    fn kepler_schemes_agree() {
        let p = KeplerProblem::default();
        let y0 = p.initial_state();
        let h = 2.0 * std::f64::consts::PI / 100.0;
        let c = gauss(2, 20);
        let cfg = IterationConfig::default();
        let (fp, _) = solve_fixed_point(&y0, h, &c, &p, &cfg, 0.0).unwrap();
        let (nt, _) = solve_simplified_newton(&y0, h, &c, &p, &cfg, 0.0).unwrap();
        let (bl, _) = solve_blended(&y0, h, &c, &p, &cfg, 0.0).unwrap();
        assert!(max_diff(&fp, &nt) <= 1e-12);
        assert!(max_diff(&bl, &nt) <= 1e-12);
    }

    #[test]
    fn blended_matches_newton_on_stiff_problem() {
        let p = StiffLinearProblem::default();
        let y0 = p.initial_state();
        let c = gauss(26, 28);
        let cfg = IterationConfig::default();
        let (nt, _) = solve_simplified_newton(&y0, 1.0, &c, &p, &cfg, 0.0).unwrap();
        let (bl, _) = solve_blended(&y0, 1.0, &c, &p, &cfg, 0.0).unwrap();
        let scale = nt.max_norm().max(1.0);
        assert!(max_diff(&bl, &nt) <= 1e-12 * scale, "{}", max_diff(&bl, &nt));
        assert!(solve_fixed_point(&y0, 1.0, &c, &p, &cfg, 0.0).unwrap_err().is_divergence());
    }

    #[test]
    fn residual_certificate_and_evaluation_budget() {
        let p = KeplerProblem::default();
        let y0 = p.initial_state();
        let h = 2.0 * std::f64::consts::PI / 20.0;
        let c = gauss(12, 20);
        for scheme in [Scheme::FixedPoint, Scheme::SimplifiedNewton, Scheme::Blended] {
            let cfg = IterationConfig::with_scheme(scheme);
            let mut solver = StageSolver::new(cfg).unwrap();
            let out = solver.solve(&p, 0.0, &y0, h, &c).unwrap();
            let f = residual(&out.gamma, &y0, h, &c, &p, 0.0).unwrap();
            let bound = cfg.residual_tolerance * max_norm(out.gamma.block(0)).max(1.0);
            assert!(f.max_norm() <= 10.0 * bound, "{scheme:?}: {}", f.max_norm());
            let st = solver.stats();
            assert!(st.field_evaluations <= c.k() * (out.iterations + 1));
            assert_eq!(out.residual_history.len() * c.k(), st.field_evaluations);
        }
    }

    #[test]
    fn factorization_counts_follow_policy() {
        let p = StiffLinearProblem::default();
        let c = gauss(8, 20);
        let y0 = p.initial_state();
        let expect = [
            (JacobianPolicy::FreshEachStep, 5),
            (JacobianPolicy::FrozenLinearPart, 1),
            (JacobianPolicy::FrozenFirstStep, 1),
        ];
        for (policy, count) in expect {
            for scheme in [Scheme::Blended, Scheme::SimplifiedNewton] {
                let cfg = IterationConfig {
                    jacobian_policy: policy,
                    ..IterationConfig::with_scheme(scheme)
                };
                let mut solver = StageSolver::new(cfg).unwrap();
                for step in 0..5 {
                    solver.solve(&p, step as f64 * 0.1, &y0, 0.1, &c).unwrap();
                }
                assert_eq!(solver.stats().factorizations, count, "{policy:?} {scheme:?}");
            }
        }
        let mut fp = StageSolver::new(IterationConfig::with_scheme(Scheme::FixedPoint)).unwrap();
        fp.solve(&KeplerProblem::default(), 0.0, &KeplerProblem::default().initial_state(), 0.01, &c)
            .unwrap();
        assert_eq!(fp.stats().factorizations, 0);
    }

    #[test]
    fn frozen_linear_part_requires_one() {
        let cfg = IterationConfig {
            jacobian_policy: JacobianPolicy::FrozenLinearPart,
            ..IterationConfig::default()
        };
        let p = KeplerProblem::default();
        let err = StageSolver::new(cfg)
            .unwrap()
            .solve(&p, 0.0, &p.initial_state(), 0.1, &gauss(2, 2))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn kron_apply_matches_dense_product() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let v = StageVector::from_blocks(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]);
        let out = v.kron_apply(&m);
        assert_eq!(out.block(0), &[-1.0, 2.0, 11.0]);
        assert_eq!(out.block(1), &[-3.5, -6.0, -7.0]);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::FixedPoint, Scheme::SimplifiedNewton, Scheme::Blended] {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("gmres".parse::<Scheme>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(IterationConfig::default().validate().is_ok());
        let bad = IterationConfig {
            max_iterations: 0,
            ..IterationConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = IterationConfig {
            residual_tolerance: -1.0,
            ..IterationConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
