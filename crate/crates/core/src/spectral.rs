//! Choice of `(s, k)` from the decay of the Legendre coefficients, and estimation of the
//! decay model `‖γ_j‖ ≈ κ √(2j+1) ρ^{−j}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{StepResult, Stepper};
use crate::legendre::{LegendreBasis, MAX_NODES};
use crate::problem::OdeProblem;
use crate::solver::{max_norm, stage_states, IterationConfig};
use crate::tableau::{CoefficientCache, HbvmCoefficients};

/// Fraction of `max_j ‖γ_j‖` (in units of machine epsilon) below which a coefficient is
/// treated as round-off.
pub const STAGNATION_FACTOR: f64 = 100.0;

/// Node count paired with degree `s`: `max(20, s + 2)`.
pub fn k_for_s(s: usize) -> usize {
    (s + 2).max(20)
}

/// Both criteria compare the first omitted coefficient `γ_s(σ)` with the retained ones,
/// `‖γ_s‖ <= tol · max_{j<s} ‖γ_j‖`; they differ in the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// `tol = √u`; relies on super-convergence at the step end.
    SuperConvergent,
    /// `tol` a small multiple of `u`.
    RoundOff,
}

impl Criterion {
    pub fn default_tolerance(&self) -> f64 {
        match self {
            Criterion::SuperConvergent => f64::EPSILON.sqrt(),
            Criterion::RoundOff => 1e-14,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::SuperConvergent => "super-convergent",
            Criterion::RoundOff => "round-off",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "super-convergent" => Ok(Criterion::SuperConvergent),
            "round-off" | "last-coefficient" => Ok(Criterion::RoundOff),
            other => Err(Error::InvalidConfig(format!("unknown order criterion '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralConfig {
    pub tolerance: f64,
    pub criterion: Criterion,
    pub s_min: usize,
    pub s_max: usize,
    /// Increment between trial degrees during calibration.
    pub s_step: usize,
    /// Number of omitted coefficients `γ_s, γ_{s+1}, …` that must pass the test. Two guard
    /// against solutions whose even and odd coefficients decay at different rates.
    pub lookahead: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self::for_criterion(Criterion::SuperConvergent)
    }
}

impl SpectralConfig {
    pub fn for_criterion(criterion: Criterion) -> Self {
        Self {
            tolerance: criterion.default_tolerance(),
            criterion,
            s_min: 2,
            s_max: 40,
            s_step: 1,
            lookahead: 2,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "spectral tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.lookahead == 0 || self.lookahead > 2 {
            return Err(Error::InvalidConfig(format!(
                "lookahead must be 1 or 2 (k = max(20, s + 2) nodes), got {}",
                self.lookahead
            )));
        }
        if self.s_min == 0 || self.s_min > self.s_max || self.s_step == 0 {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= s_min <= s_max and s_step >= 1, got s_min={}, s_max={}, s_step={}",
                self.s_min, self.s_max, self.s_step
            )));
        }
        if k_for_s(self.s_max) > MAX_NODES {
            return Err(Error::InvalidConfig(format!("s_max = {} is too large", self.s_max)));
        }
        Ok(())
    }
}

/// Outcome of the trailing-coefficient test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderDecision {
    pub accepted: bool,
    /// The tested degree when accepted, otherwise the next degree to try.
    pub s: usize,
}

/// Tests `‖γ_{s−1}‖ <= tol · max_{j<=s−1} ‖γ_j‖` with `s = gamma_norms.len()`.
pub fn select_order(gamma_norms: &[f64], config: &SpectralConfig) -> Result<OrderDecision> {
    let s = gamma_norms.len();
    if s == 0 {
        return Err(Error::InvalidConfig("no coefficient norms to test".into()));
    }
    let largest = gamma_norms.iter().copied().fold(0.0, f64::max);
    let trailing = gamma_norms[s - 1];
    if trailing <= config.tolerance * largest {
        return Ok(OrderDecision { accepted: true, s });
    }
    if s >= config.s_max {
        return Err(Error::OrderSelection { s_max: config.s_max });
    }
    Ok(OrderDecision {
        accepted: false,
        s: (s + config.s_step).min(config.s_max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayEstimate {
    pub kappa: f64,
    pub rho: f64,
    /// Half-open index range `[start, end)` of the coefficients used in the fit.
    pub fitted_range: (usize, usize),
    /// Euclidean norm of the residuals of the log-space fit.
    pub residual: f64,
}

impl DecayEstimate {
    /// Model value `κ √(2j+1) ρ^{−j}`.
    pub fn model(&self, j: usize) -> f64 {
        self.kappa * (2.0 * j as f64 + 1.0).sqrt() * self.rho.powi(-(j as i32))
    }
}

/// Round-off floor `100 · u · max_j ‖γ_j‖`.
pub fn stagnation_floor(gamma_norms: &[f64], machine_epsilon: f64) -> f64 {
    STAGNATION_FACTOR * machine_epsilon * gamma_norms.iter().copied().fold(0.0, f64::max)
}

/// Unweighted least squares of `log‖γ_j‖ − ½ log(2j+1) = log κ − j log ρ` over the leading
/// coefficients that sit above the round-off floor.
pub fn estimate_decay(gamma_norms: &[f64], machine_epsilon: f64) -> Result<DecayEstimate> {
    let floor = stagnation_floor(gamma_norms, machine_epsilon);
    let end = gamma_norms
        .iter()
        .position(|&g| !(g > floor))
        .unwrap_or(gamma_norms.len());
    if end < 3 {
        return Err(Error::InsufficientDecayData(end));
    }
    let pts: Vec<(f64, f64)> = gamma_norms[..end]
        .iter()
        .enumerate()
        .map(|(j, &g)| (j as f64, g.ln() - 0.5 * (2.0 * j as f64 + 1.0).ln()))
        .collect();
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(DecayEstimate {
        kappa: intercept.exp(),
        rho: (-slope).exp(),
        fitted_range: (0, end),
        residual,
    })
}

/// The first `count` Legendre coefficients dropped by HBVM(k,s),
/// `γ_j(σ) = Σ_i b_i P_j(c_i) f(t0 + c_i h, Y_i)` for `j = s, …, s + count − 1`, from the
/// converged stage states. Needs `k >= s + count`.
pub fn omitted_coefficients(
    problem: &dyn OdeProblem,
    t0: f64,
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    step: &StepResult,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let (s, m) = (coeffs.s(), y0.len());
    if coeffs.k() < s + count {
        return Err(Error::InvalidParameters { s: s + count, k: coeffs.k() });
    }
    let basis = LegendreBasis::new(s + count);
    let stages = stage_states(&step.gamma, y0, h, coeffs);
    let mut out = vec![vec![0.0; m]; count];
    let mut fi = vec![0.0; m];
    for (i, (&c, &b)) in coeffs.nodes().iter().zip(coeffs.weights()).enumerate() {
        problem
            .field(t0 + c * h, &stages[i * m..(i + 1) * m], &mut fi)
            .map_err(|e| Error::FieldEvaluation { stage: i, reason: e.0 })?;
        for (r, o) in out.iter_mut().enumerate() {
            let w = b * basis.eval(s + r, c)?;
            for (v, f) in o.iter_mut().zip(&fi) {
                *v += w * f;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationTrial {
    pub s: usize,
    pub k: usize,
    /// `max(‖γ_s‖, …) / max_{j<s} ‖γ_j‖` over the omitted coefficients, or `None` when the
    /// trial solve failed.
    pub omitted_ratio: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub s: usize,
    pub k: usize,
    /// `‖γ_0‖, …, ‖γ_{s−1}‖` of the accepted trial.
    pub gamma_norms: Vec<f64>,
    /// Largest omitted-coefficient norm of the accepted trial.
    pub omitted_norm: f64,
    pub trials: Vec<CalibrationTrial>,
}

/// Picks `s` on the first step by trial solves at `s_min, s_min + s_step, …` until the
/// omitted coefficients pass the criterion; `k` follows [`k_for_s`]. Trials whose stage
/// iteration fails are skipped. The result is meant to be held fixed for a run.
pub fn calibrate_order(
    problem: &dyn OdeProblem,
    t0: f64,
    y0: &[f64],
    h: f64,
    config: &SpectralConfig,
    iteration: &IterationConfig,
    cache: &CoefficientCache,
) -> Result<Calibration> {
    config.validate()?;
    let mut trials = Vec::new();
    let mut s = config.s_min;
    loop {
        let k = k_for_s(s);
        let coeffs = cache.get(s, k)?;
        let mut stepper = Stepper::new(&coeffs, *iteration)?;
        let outcome = stepper.step(problem, t0, y0, h).and_then(|step| {
            omitted_coefficients(problem, t0, y0, h, &coeffs, &step, config.lookahead).map(|g| (step, g))
        });
        match outcome {
            Ok((step, omitted)) => {
                let mut norms = step.gamma_norms.clone();
                let omitted_norm = omitted.iter().map(|g| max_norm(g)).fold(0.0, f64::max);
                norms.push(omitted_norm);
                let largest = step.gamma_norms.iter().copied().fold(0.0, f64::max);
                let accepted = select_order(&norms, &SpectralConfig { s_max: usize::MAX, ..*config })?.accepted;
                trials.push(CalibrationTrial {
                    s,
                    k,
                    omitted_ratio: Some(omitted_norm / largest),
                    accepted,
                });
                if accepted {
                    return Ok(Calibration {
                        s,
                        k,
                        gamma_norms: step.gamma_norms,
                        omitted_norm,
                        trials,
                    });
                }
            }
            Err(e) if e.is_divergence() => trials.push(CalibrationTrial {
                s,
                k,
                omitted_ratio: None,
                accepted: false,
            }),
            Err(e) => return Err(e),
        }
        if s >= config.s_max {
            return Err(Error::OrderSelection { s_max: config.s_max });
        }
        s = (s + config.s_step).min(config.s_max);
    }
}
