//! Fixed-step HBVM(k,s) time stepping with dense output and invariant monitoring.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::legendre::LegendreBasis;
use crate::problem::OdeProblem;
use crate::solver::{max_norm, IterationConfig, Scheme, SolverStats, StageSolver, StageVector};
use crate::tableau::HbvmCoefficients;

#[derive(Debug, Clone)]
pub struct StepResult {
    /// `y0 + h γ_0`.
    pub y1: Vec<f64>,
    pub gamma: StageVector,
    pub iterations: usize,
    pub scheme_used: Scheme,
    pub gamma_norms: Vec<f64>,
}

impl StepResult {
    pub fn dense_output(&self, y0: &[f64], h: f64) -> DenseOutput {
        DenseOutput {
            y0: y0.to_vec(),
            h,
            gamma: self.gamma.clone(),
            basis: LegendreBasis::new(self.gamma.s().max(1) - 1),
        }
    }
}

/// The degree-`s` polynomial `σ(ch) = y0 + h Σ_j (∫₀^c P_j) γ_j` on one step.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    pub y0: Vec<f64>,
    pub h: f64,
    pub gamma: StageVector,
    pub basis: LegendreBasis,
}

impl DenseOutput {
    pub fn eval(&self, c: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::AbscissaOutOfRange(c));
        }
        let mut y = self.y0.clone();
        for j in 0..self.gamma.s() {
            let w = self.h * self.basis.integral(j, c)?;
            for (yi, g) in y.iter_mut().zip(self.gamma.block(j)) {
                *yi += w * g;
            }
        }
        Ok(y)
    }
}

fn advance(y0: &[f64], h: f64, gamma: &StageVector) -> Vec<f64> {
    y0.iter().zip(gamma.block(0)).map(|(y, g)| y + h * g).collect()
}

fn check_start(problem: &dyn OdeProblem, y0: &[f64]) -> Result<()> {
    if y0.len() != problem.dim() {
        return Err(Error::InvalidConfig(format!(
            "initial state has dimension {}, problem '{}' expects {}",
            y0.len(),
            problem.name(),
            problem.dim()
        )));
    }
    if !problem.in_domain(y0) {
        return Err(Error::DomainViolation { stage: 0 });
    }
    Ok(())
}

/// Steps a problem with one method, keeping the solver workspace between steps.
#[derive(Debug)]
pub struct Stepper<'c> {
    coeffs: &'c HbvmCoefficients,
    solver: StageSolver,
}

impl<'c> Stepper<'c> {
    pub fn new(coeffs: &'c HbvmCoefficients, config: IterationConfig) -> Result<Self> {
        Ok(Self {
            coeffs,
            solver: StageSolver::new(config)?,
        })
    }

    pub fn step(&mut self, problem: &dyn OdeProblem, t0: f64, y0: &[f64], h: f64) -> Result<StepResult> {
        check_start(problem, y0)?;
        let out = self.solver.solve(problem, t0, y0, h, self.coeffs)?;
        Ok(StepResult {
            y1: advance(y0, h, &out.gamma),
            gamma_norms: out.gamma.block_norms(),
            iterations: out.iterations,
            scheme_used: self.solver.config().scheme,
            gamma: out.gamma,
        })
    }

    pub fn stats(&self) -> SolverStats {
        self.solver.stats()
    }
}

/// A single HBVM(k,s) step.
pub fn hbvm_step(
    problem: &dyn OdeProblem,
    t0: f64,
    y0: &[f64],
    h: f64,
    coeffs: &HbvmCoefficients,
    config: &IterationConfig,
) -> Result<StepResult> {
    Stepper::new(coeffs, *config)?.step(problem, t0, y0, h)
}

/// Pull-based sampler invoked at every step boundary.
pub trait Observer {
    /// Called after step `step` (1-based) has produced `y` at time `t`.
    fn observe(&mut self, step: usize, t: f64, y: &[f64]) -> Result<()>;
}

/// Errors sampled at period ends: solution error against the problem's reference and
/// drift of every named invariant, each in the infinity norm, maximized over periods.
#[derive(Clone)]
pub struct PeriodSampler<'p> {
    problem: &'p dyn OdeProblem,
    steps_per_period: usize,
    initial_invariants: Vec<(&'static str, f64)>,
    pub max_solution_error: f64,
    pub max_invariant_errors: BTreeMap<&'static str, f64>,
    pub samples: usize,
}

impl<'p> PeriodSampler<'p> {
    pub fn new(problem: &'p dyn OdeProblem, steps_per_period: usize) -> Self {
        let initial_invariants = problem.invariants(&problem.initial_state());
        let max_invariant_errors = initial_invariants.iter().map(|(n, _)| (*n, 0.0)).collect();
        Self {
            problem,
            steps_per_period: steps_per_period.max(1),
            initial_invariants,
            max_solution_error: 0.0,
            max_invariant_errors,
            samples: 0,
        }
    }
}

impl Observer for PeriodSampler<'_> {
    fn observe(&mut self, step: usize, _t: f64, y: &[f64]) -> Result<()> {
        if !step.is_multiple_of(self.steps_per_period) {
            return Ok(());
        }
        let period = step / self.steps_per_period;
        let reference = self.problem.reference_at_period(period);
        let err = y
            .iter()
            .zip(&reference)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        self.max_solution_error = self.max_solution_error.max(err);
        for ((name, v), (_, v0)) in self.problem.invariants(y).into_iter().zip(&self.initial_invariants) {
            let e = self.max_invariant_errors.entry(name).or_insert(0.0);
            *e = e.max((v - v0).abs());
        }
        self.samples += 1;
        Ok(())
    }
}

/// Summary of a fixed-step run.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrationReport {
    pub steps: usize,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub stats: SolverStats,
    pub first_step_gamma_norms: Vec<f64>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Applies `n_steps` HBVM steps of size `h` from `(t0, y0)`, notifying observers after each.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    problem: &dyn OdeProblem,
    t0: f64,
    y0: &[f64],
    h: f64,
    n_steps: usize,
    coeffs: &HbvmCoefficients,
    config: &IterationConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<IntegrationReport> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("stepsize must be positive, got {h}")));
    }
    check_start(problem, y0)?;
    let started = Instant::now();
    let mut stepper = Stepper::new(coeffs, *config)?;
    let mut y = y0.to_vec();
    let mut first_norms = Vec::new();
    for step in 0..n_steps {
        let t = t0 + step as f64 * h;
        let result = stepper.step(problem, t, &y, h).map_err(|e| Error::StepFailed {
            step: step + 1,
            time: t,
            source: Box::new(e),
        })?;
        if step == 0 {
            first_norms = result.gamma_norms.clone();
        }
        y = result.y1;
        let t_next = t0 + (step + 1) as f64 * h;
        for obs in observers.iter_mut() {
            obs.observe(step + 1, t_next, &y)?;
        }
    }
    Ok(IntegrationReport {
        steps: n_steps,
        final_time: t0 + n_steps as f64 * h,
        final_state: y,
        stats: stepper.stats(),
        first_step_gamma_norms: first_norms,
        elapsed: started.elapsed(),
    })
}

/// `‖a − b‖_∞`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_norm(&d)
}
