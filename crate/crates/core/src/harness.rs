//! Experiment runner behind the CLI: specs, run reports, convergence tables with rates,
//! coefficient-decay figure data and their CSV / JSON / text renderings.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{hbvm_step, integrate, Observer, PeriodSampler};
use crate::problem::OdeProblem;
use crate::problems::problem_by_name;
use crate::solver::{IterationConfig, JacobianPolicy, Scheme, SolverStats};
use crate::spectral::{calibrate_order, estimate_decay, stagnation_floor, Calibration, DecayEstimate, SpectralConfig};
use crate::tableau::CoefficientCache;

/// Errors below this are at round-off level; the following rate is printed as `***`.
pub const ROUND_OFF_FLOOR: f64 = 1e-13;

/// Error columns in table order, paired with the invariant name each one tracks
/// (`None` for the solution error).
pub const ERROR_COLUMNS: [(&str, Option<&str>); 5] = [
    ("e_H", Some("H")),
    ("e_M", Some("M")),
    ("e_L", Some("L")),
    ("e_C", Some("C")),
    ("e_y", None),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    /// `(s, k)` chosen from the coefficient decay on the first step.
    Shbvm,
    Hbvm { k: usize, s: usize },
    /// HBVM(s,s).
    Gauss { s: usize },
}

impl FromStr for Method {
    type Err = Error;

    /// Parses `shbvm`, `hbvm:k,s` or `gauss:s`.
    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("method must be shbvm, hbvm:k,s or gauss:s, got '{text}'"));
        let int = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        match text.split_once(':') {
            None if text == "shbvm" => Ok(Method::Shbvm),
            Some(("hbvm", rest)) => {
                let (k, s) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Method::Hbvm { k: int(k)?, s: int(s)? })
            }
            Some(("gauss", s)) => Ok(Method::Gauss { s: int(s)? }),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Shbvm => f.write_str("shbvm"),
            Method::Hbvm { k, s } => write!(f, "hbvm:{k},{s}"),
            Method::Gauss { s } => write!(f, "gauss:{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
    Table,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "table" | "pretty" => Ok(OutputFormat::Table),
            other => Err(Error::InvalidConfig(format!("unknown output format '{other}'"))),
        }
    }
}

impl OutputFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Table => "txt",
        }
    }
}

/// One experiment: a problem, a method, `n` steps per period (`h = T/n`) over `periods` periods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub problem: String,
    pub method: Method,
    pub n: usize,
    pub periods: usize,
    pub iteration: IterationConfig,
    /// Order-selection settings, used by [`Method::Shbvm`].
    pub spectral: SpectralConfig,
    pub output: OutputFormat,
    /// Attach a decay fit of the first-step coefficients to the report.
    pub decay: bool,
}

impl ExperimentSpec {
    pub fn new(problem: &str, method: Method, n: usize, periods: usize) -> Self {
        Self {
            problem: problem.to_string(),
            method,
            n,
            periods,
            iteration: IterationConfig::default(),
            spectral: SpectralConfig::default(),
            output: OutputFormat::Table,
            decay: false,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.iteration.scheme = scheme;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.spectral.tolerance = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.periods == 0 {
            return Err(Error::InvalidConfig(format!(
                "n and periods must be at least 1, got n={}, periods={}",
                self.n, self.periods
            )));
        }
        match self.method {
            Method::Hbvm { k, s } if s == 0 || k < s => return Err(Error::InvalidParameters { s, k }),
            Method::Gauss { s: 0 } => return Err(Error::InvalidParameters { s: 0, k: 0 }),
            Method::Shbvm => self.spectral.validate()?,
            _ => {}
        }
        self.iteration.validate()
    }
}

/// Per-period maxima of the invariant drifts and the solution error, infinity norm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorColumns {
    #[serde(rename = "e_H")]
    pub e_h: Option<f64>,
    #[serde(rename = "e_M")]
    pub e_m: Option<f64>,
    #[serde(rename = "e_L")]
    pub e_l: Option<f64>,
    #[serde(rename = "e_C")]
    pub e_c: Option<f64>,
    pub e_y: Option<f64>,
}

impl ErrorColumns {
    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "e_H" => self.e_h,
            "e_M" => self.e_m,
            "e_L" => self.e_l,
            "e_C" => self.e_c,
            "e_y" => self.e_y,
            _ => None,
        }
    }

    fn from_sampler(sampler: &PeriodSampler<'_>) -> Self {
        let inv = |name: &str| sampler.max_invariant_errors.get(name).copied();
        Self {
            e_h: inv("H"),
            e_m: inv("M"),
            e_l: inv("L"),
            e_c: inv("C"),
            e_y: Some(sampler.max_solution_error),
        }
    }
}

/// Everything needed to reproduce a number: the settings actually used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub problem: String,
    pub method: String,
    pub periods: usize,
    pub period: f64,
    pub scheme: Scheme,
    pub residual_tolerance: f64,
    pub stall_tolerance: f64,
    pub max_iterations: usize,
    pub jacobian_policy: JacobianPolicy,
    /// Order-selection tolerance and lookahead, present for SHBVM runs.
    pub order_tolerance: Option<f64>,
    pub order_lookahead: Option<usize>,
    pub version: &'static str,
}

impl Provenance {
    fn new(spec: &ExperimentSpec, period: f64) -> Self {
        let shbvm = spec.method == Method::Shbvm;
        Self {
            problem: spec.problem.clone(),
            method: spec.method.to_string(),
            periods: spec.periods,
            period,
            scheme: spec.iteration.scheme,
            residual_tolerance: spec.iteration.residual_tolerance,
            stall_tolerance: spec.iteration.stall_tolerance,
            max_iterations: spec.iteration.max_iterations,
            jacobian_policy: spec.iteration.jacobian_policy,
            order_tolerance: shbvm.then_some(spec.spectral.tolerance),
            order_lookahead: shbvm.then_some(spec.spectral.lookahead),
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    /// `# key=value` header lines.
    pub fn header(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# shbvm {}", self.version);
        let _ = writeln!(
            out,
            "# problem={} method={} periods={} period={}",
            self.problem, self.method, self.periods, self.period
        );
        let _ = writeln!(
            out,
            "# scheme={} residual_tolerance={:e} stall_tolerance={:e} max_iterations={} jacobian={}",
            self.scheme.as_str(),
            self.residual_tolerance,
            self.stall_tolerance,
            self.max_iterations,
            policy_name(self.jacobian_policy)
        );
        if let (Some(tol), Some(look)) = (self.order_tolerance, self.order_lookahead) {
            let _ = writeln!(out, "# order_tolerance={tol:e} order_lookahead={look}");
        }
        out
    }
}

pub fn policy_name(p: JacobianPolicy) -> &'static str {
    match p {
        JacobianPolicy::FreshEachStep => "fresh-each-step",
        JacobianPolicy::FrozenLinearPart => "frozen-linear-part",
        JacobianPolicy::FrozenFirstStep => "frozen-first-step",
    }
}

pub fn parse_policy(s: &str) -> Result<JacobianPolicy> {
    match s {
        "fresh-each-step" | "fresh" => Ok(JacobianPolicy::FreshEachStep),
        "frozen-linear-part" | "frozen-linear" => Ok(JacobianPolicy::FrozenLinearPart),
        "frozen-first-step" | "frozen-first" => Ok(JacobianPolicy::FrozenFirstStep),
        other => Err(Error::InvalidConfig(format!("unknown jacobian policy '{other}'"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub n: usize,
    pub h: f64,
    pub k: usize,
    pub s: usize,
    pub steps: usize,
    /// Wall time of calibration plus integration, in seconds.
    pub time: f64,
    pub errors: ErrorColumns,
    pub stats: SolverStats,
    /// `‖γ_j‖_∞` of the first step.
    pub gamma_norms: Vec<f64>,
    pub calibration: Option<Calibration>,
    pub decay: Option<DecayEstimate>,
    pub provenance: Provenance,
}

/// Runs `spec`: order calibration for SHBVM, then `n · periods` steps with errors sampled at
/// every period end. Extra observers see every step.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    cache: &CoefficientCache,
    observers: &mut [&mut dyn Observer],
) -> Result<RunReport> {
    spec.validate()?;
    let problem = problem_by_name(&spec.problem)?;
    let problem: &dyn OdeProblem = problem.as_ref();
    let period = problem.period();
    let h = period / spec.n as f64;
    let y0 = problem.initial_state();
    let started = Instant::now();

    let (s, k, calibration) = match spec.method {
        Method::Shbvm => {
            let cal = calibrate_order(problem, 0.0, &y0, h, &spec.spectral, &spec.iteration, cache)?;
            (cal.s, cal.k, Some(cal))
        }
        Method::Hbvm { k, s } => (s, k, None),
        Method::Gauss { s } => (s, s, None),
    };
    let coeffs = cache.get(s, k)?;

    let mut sampler = PeriodSampler::new(problem, spec.n);
    let steps = spec.n * spec.periods;
    let report = {
        let mut all: Vec<&mut dyn Observer> = Vec::with_capacity(observers.len() + 1);
        all.push(&mut sampler);
        for o in observers.iter_mut() {
            all.push(&mut **o);
        }
        integrate(problem, 0.0, &y0, h, steps, &coeffs, &spec.iteration, &mut all)?
    };
    let time = started.elapsed().as_secs_f64();

    let decay = if spec.decay {
        Some(estimate_decay(&report.first_step_gamma_norms, f64::EPSILON)?)
    } else {
        None
    };
    Ok(RunReport {
        n: spec.n,
        h,
        k,
        s,
        steps,
        time,
        errors: ErrorColumns::from_sampler(&sampler),
        stats: report.stats,
        gamma_norms: report.first_step_gamma_norms,
        calibration,
        decay,
        provenance: Provenance::new(spec, period),
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunReport> {
    run_experiment_with(spec, &CoefficientCache::new(), &mut [])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Rate {
    Value(f64),
    /// The previous error was already at round-off level.
    #[serde(serialize_with = "serialize_marker")]
    RoundOff,
}

fn serialize_marker<S: serde::Serializer>(s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str("***")
}

impl std::fmt::Display for Rate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rate::Value(v) => write!(f, "{v:.1}"),
            Rate::RoundOff => f.write_str("***"),
        }
    }
}

/// `log₂(e_prev / e_next)`, or `***` when `e_prev` is below [`ROUND_OFF_FLOOR`].
pub fn rate(e_prev: f64, e_next: f64) -> Rate {
    if e_prev < ROUND_OFF_FLOOR {
        Rate::RoundOff
    } else {
        Rate::Value((e_prev / e_next).log2())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub report: RunReport,
    /// Rate per error column relative to the previous row; empty on the first row.
    pub rates: Vec<(&'static str, Option<Rate>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<TableRow>,
}

/// Runs specs that differ only in `n`, each `n` doubling the previous, and attaches rates.
pub fn convergence_table(specs: &[ExperimentSpec]) -> Result<ConvergenceTable> {
    if specs.len() < 2 {
        return Err(Error::InvalidConfig("a convergence table needs at least two runs".into()));
    }
    for pair in specs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let same = ExperimentSpec { n: a.n, ..b.clone() } == *a;
        if !same {
            return Err(Error::InvalidConfig("table runs must differ only in n".into()));
        }
        if b.n != 2 * a.n {
            return Err(Error::InvalidConfig(format!("n must double between rows, got {} then {}", a.n, b.n)));
        }
    }
    let cache = CoefficientCache::new();
    let reports = specs
        .iter()
        .map(|s| run_experiment_with(s, &cache, &mut []))
        .collect::<Result<Vec<_>>>()?;
    Ok(table_from_reports(reports))
}

pub fn table_from_reports(reports: Vec<RunReport>) -> ConvergenceTable {
    let mut rows: Vec<TableRow> = Vec::with_capacity(reports.len());
    for report in reports {
        let rates = ERROR_COLUMNS
            .iter()
            .map(|(col, _)| {
                let prev = rows.last().and_then(|r| r.report.errors.get(col));
                let next = report.errors.get(col);
                (*col, prev.zip(next).map(|(p, n)| rate(p, n)))
            })
            .collect();
        rows.push(TableRow { report, rates });
    }
    ConvergenceTable { rows }
}

impl ConvergenceTable {
    fn columns(&self) -> Vec<&'static str> {
        ERROR_COLUMNS
            .iter()
            .filter(|(col, _)| self.rows.iter().any(|r| r.report.errors.get(col).is_some()))
            .map(|(col, _)| *col)
            .collect()
    }

    /// Rate of `column` on row `i`.
    pub fn rate(&self, i: usize, column: &str) -> Option<Rate> {
        self.rows
            .get(i)?
            .rates
            .iter()
            .find(|(c, _)| *c == column)
            .and_then(|(_, r)| *r)
    }

    /// CSV with a `#` provenance header. Columns `n,k,s,time,e_H,e_M,e_L,e_C,e_y` then one
    /// `rate_*` per error column; absent values are empty. `timing = false` leaves the time
    /// column empty so repeated runs are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::new();
        if let Some(first) = self.rows.first() {
            out.push_str(&first.report.provenance.header());
        }
        let mut head = vec!["n", "k", "s", "time"];
        head.extend(ERROR_COLUMNS.iter().map(|(c, _)| *c));
        let rate_names: Vec<String> = ERROR_COLUMNS.iter().map(|(c, _)| format!("rate_{}", &c[2..])).collect();
        out.push_str(&head.join(","));
        for r in &rate_names {
            out.push(',');
            out.push_str(r);
        }
        out.push('\n');
        for row in &self.rows {
            let r = &row.report;
            let mut cells = vec![r.n.to_string(), r.k.to_string(), r.s.to_string()];
            cells.push(if timing { format!("{:.3}", r.time) } else { String::new() });
            for (col, _) in ERROR_COLUMNS {
                cells.push(r.errors.get(col).map(|e| format!("{e:.6e}")).unwrap_or_default());
            }
            for (_, rate) in &row.rates {
                cells.push(match rate {
                    Some(Rate::Value(v)) => format!("{v:.3}"),
                    Some(Rate::RoundOff) => "***".into(),
                    None => String::new(),
                });
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Fixed-width text table, `---` for rates of the first row.
    pub fn to_pretty(&self) -> String {
        let cols = self.columns();
        let mut out = String::new();
        if let Some(first) = self.rows.first() {
            out.push_str(&first.report.provenance.header());
        }
        let _ = write!(out, "{:>6} {:>4} {:>4} {:>9}", "n", "k", "s", "time");
        for c in &cols {
            let _ = write!(out, " {:>10} {:>5}", c, "rate");
        }
        out.push('\n');
        for row in &self.rows {
            let r = &row.report;
            let _ = write!(out, "{:>6} {:>4} {:>4} {:>9.3}", r.n, r.k, r.s, r.time);
            for c in &cols {
                let e = r.errors.get(c).map(|e| format!("{e:.2e}")).unwrap_or_default();
                let rate = self.rate(row_index(&self.rows, row), c).map(|x| x.to_string()).unwrap_or_else(|| "---".into());
                let _ = write!(out, " {e:>10} {rate:>5}");
            }
            out.push('\n');
        }
        out
    }
}

fn row_index(rows: &[TableRow], row: &TableRow) -> usize {
    rows.iter().position(|r| std::ptr::eq(r, row)).unwrap_or(0)
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self, timing: bool) -> String {
        table_from_reports(vec![self.clone()]).to_csv(timing)
    }

    pub fn to_pretty(&self) -> String {
        let mut out = table_from_reports(vec![self.clone()]).to_pretty();
        let st = &self.stats;
        let _ = writeln!(
            out,
            "# steps={} iterations={} max_iterations_per_step={} field_evaluations={} factorizations={}",
            self.steps, st.iterations, st.max_iterations, st.field_evaluations, st.factorizations
        );
        if let Some(d) = &self.decay {
            let _ = writeln!(out, "# decay kappa={:.3} rho={:.3} fitted={:?}", d.kappa, d.rho, d.fitted_range);
        }
        out
    }

    pub fn render(&self, format: OutputFormat, timing: bool) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(timing),
            OutputFormat::Json => self.to_json(),
            OutputFormat::Table => self.to_pretty(),
        }
    }
}

impl ConvergenceTable {
    pub fn render(&self, format: OutputFormat, timing: bool) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(timing),
            OutputFormat::Json => serde_json::to_string_pretty(self).expect("table serializes"),
            OutputFormat::Table => self.to_pretty(),
        }
    }
}

/// One stepsize of the decay figure.
#[derive(Debug, Clone, Serialize)]
pub struct DecaySeries {
    pub n: usize,
    pub h: f64,
    pub gamma_norms: Vec<f64>,
    pub estimate: Option<DecayEstimate>,
    /// `κ √(2j+1) ρ^{−j}` at every `j`, when the fit succeeded.
    pub model: Vec<f64>,
    /// Coefficients at or below the round-off floor.
    pub stagnated: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFigure {
    pub problem: String,
    pub k: usize,
    pub s: usize,
    pub series: Vec<DecaySeries>,
}

/// One HBVM(k,s) step from the initial condition for each `h = T/n`, with the fitted decay.
pub fn decay_figure_data(problem: &str, k: usize, s: usize, ns: &[usize], iteration: &IterationConfig) -> Result<DecayFigure> {
    let p = problem_by_name(problem)?;
    let coeffs = CoefficientCache::new().get(s, k)?;
    let y0 = p.initial_state();
    let mut series = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let h = p.period() / n as f64;
        let step = hbvm_step(p.as_ref(), 0.0, &y0, h, &coeffs, iteration)?;
        let norms = step.gamma_norms;
        let floor = stagnation_floor(&norms, f64::EPSILON);
        let estimate = estimate_decay(&norms, f64::EPSILON).ok();
        let model = estimate.map(|e| (0..norms.len()).map(|j| e.model(j)).collect()).unwrap_or_default();
        series.push(DecaySeries {
            n,
            h,
            stagnated: norms.iter().map(|&g| !(g > floor)).collect(),
            gamma_norms: norms,
            estimate,
            model,
        });
    }
    Ok(DecayFigure {
        problem: p.name().to_string(),
        k,
        s,
        series,
    })
}

impl DecayFigure {
    /// Long-format CSV: one row per `(n, j)`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# shbvm {}\n# problem={} k={} s={}\n", env!("CARGO_PKG_VERSION"), self.problem, self.k, self.s);
        for ser in &self.series {
            if let Some(e) = ser.estimate {
                let _ = writeln!(out, "# n={} kappa={:.6} rho={:.6} fitted={}..{}", ser.n, e.kappa, e.rho, e.fitted_range.0, e.fitted_range.1);
            }
        }
        out.push_str("n,h,j,gamma_norm,model,stagnated\n");
        for ser in &self.series {
            for (j, g) in ser.gamma_norms.iter().enumerate() {
                let model = ser.model.get(j).map(|m| format!("{m:.6e}")).unwrap_or_default();
                let _ = writeln!(out, "{},{:.17e},{},{:.6e},{},{}", ser.n, ser.h, j, g, model, ser.stagnated[j]);
            }
        }
        out
    }

    /// `n  h  kappa  rho` summary, one line per stepsize.
    pub fn to_pretty(&self) -> String {
        let mut out = format!("{:>6} {:>12} {:>8} {:>8}\n", "n", "h", "kappa", "rho");
        for ser in &self.series {
            let (k, r) = ser.estimate.map(|e| (format!("{:.2}", e.kappa), format!("{:.2}", e.rho))).unwrap_or_default();
            let _ = writeln!(out, "{:>6} {:>12.6} {:>8} {:>8}", ser.n, ser.h, k, r);
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => serde_json::to_string_pretty(self).expect("figure serializes"),
            OutputFormat::Table => self.to_pretty(),
        }
    }
}

/// Streams `step,t,y_1..y_m,<invariants>` rows to a writer.
pub struct TrajectoryWriter<'p, W: Write> {
    problem: &'p dyn OdeProblem,
    out: W,
    header_written: bool,
}

impl<'p, W: Write> TrajectoryWriter<'p, W> {
    pub fn new(problem: &'p dyn OdeProblem, out: W) -> Self {
        Self {
            problem,
            out,
            header_written: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write_row(&mut self, step: usize, t: f64, y: &[f64]) -> std::io::Result<()> {
        let inv = self.problem.invariants(y);
        if !self.header_written {
            let mut head = vec!["step".to_string(), "t".to_string()];
            head.extend((1..=y.len()).map(|i| format!("y{i}")));
            head.extend(inv.iter().map(|(n, _)| n.to_string()));
            writeln!(self.out, "{}", head.join(","))?;
            self.header_written = true;
        }
        let mut cells = vec![step.to_string(), format!("{t:.17e}")];
        cells.extend(y.iter().map(|v| format!("{v:.17e}")));
        cells.extend(inv.iter().map(|(_, v)| format!("{v:.17e}")));
        writeln!(self.out, "{}", cells.join(","))
    }

    /// Writes the initial state as step 0.
    pub fn start(&mut self, t0: f64, y0: &[f64]) -> Result<()> {
        Ok(self.write_row(0, t0, y0)?)
    }
}

impl<W: Write> Observer for TrajectoryWriter<'_, W> {
    fn observe(&mut self, step: usize, t: f64, y: &[f64]) -> Result<()> {
        Ok(self.write_row(step, t, y)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn method_parsing() {
        assert_eq!("shbvm".parse::<Method>().unwrap(), Method::Shbvm);
        assert_eq!("hbvm:20,16".parse::<Method>().unwrap(), Method::Hbvm { k: 20, s: 16 });
        assert_eq!("gauss:2".parse::<Method>().unwrap(), Method::Gauss { s: 2 });
        for bad in ["hbvm:20", "gauss:x", "rk4", "shbvm:3"] {
            assert!(bad.parse::<Method>().is_err(), "{bad}");
        }
        for m in [Method::Shbvm, Method::Hbvm { k: 6, s: 1 }, Method::Gauss { s: 3 }] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn rates_and_round_off_marker() {
        assert_eq!(rate(1.6e-3, 1e-4), Rate::Value(4.0));
        assert_eq!(rate(9.55e-15, 1.53e-14), Rate::RoundOff);
        // the row that first reaches round-off still gets a rate
        assert!(matches!(rate(1.44e-13, 9.55e-15), Rate::Value(v) if (v - 3.9).abs() < 0.05));
        assert_eq!(Rate::RoundOff.to_string(), "***");
        assert_eq!(serde_json::to_string(&Rate::RoundOff).unwrap(), "\"***\"");
    }

    #[test]
    fn spec_validation() {
        assert!(ExperimentSpec::new("kepler", Method::Shbvm, 0, 1).validate().is_err());
        assert!(ExperimentSpec::new("kepler", Method::Hbvm { k: 2, s: 3 }, 10, 1).validate().is_err());
        assert!(ExperimentSpec::new("kepler", Method::Gauss { s: 2 }, 10, 1).validate().is_ok());
        assert!(matches!(
            run_experiment(&ExperimentSpec::new("pendulum", Method::Shbvm, 10, 1)),
            Err(Error::UnknownProblem(_))
        ));
    }

    #[test]
    fn table_requires_doubling() {
        let a = ExperimentSpec::new("kepler", Method::Gauss { s: 2 }, 100, 1);
        let b = ExperimentSpec { n: 300, ..a.clone() };
        assert!(convergence_table(&[a.clone(), b]).is_err());
        let c = ExperimentSpec { n: 200, periods: 2, ..a.clone() };
        assert!(convergence_table(&[a.clone(), c]).is_err());
        assert!(convergence_table(&[a]).is_err());
    }

    #[test]
    fn gauss_two_table_has_fourth_order_rates() {
        let specs: Vec<_> = [100, 200]
            .iter()
            .map(|&n| ExperimentSpec::new("kepler", Method::Gauss { s: 2 }, n, 1))
            .collect();
        let table = convergence_table(&specs).unwrap();
        let r = table.rate(1, "e_y").unwrap();
        assert!(matches!(r, Rate::Value(v) if (v - 4.0).abs() < 0.3), "{r:?}");
        assert!(table.rate(0, "e_y").is_none());
        assert!(table.rows.iter().all(|row| row.report.errors.e_c.is_none()));
        let csv = table.to_csv(false);
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "n,k,s,time,e_H,e_M,e_L,e_C,e_y,rate_H,rate_M,rate_L,rate_C,rate_y");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("100,2,2,,"));
        assert!(csv.starts_with("# shbvm"));
        assert!(csv.contains("method=gauss:2"));
        assert!(table.to_pretty().contains("---"));
    }

    #[test]
    fn csv_is_deterministic_without_timing() {
        let spec = ExperimentSpec::new("lotka-volterra", Method::Hbvm { k: 8, s: 4 }, 20, 2);
        let a = run_experiment(&spec).unwrap().to_csv(false);
        let b = run_experiment(&spec).unwrap().to_csv(false);
        assert_eq!(a, b);
    }

    #[test]
    fn shbvm_report_carries_calibration_and_decay() {
        let spec = ExperimentSpec {
            decay: true,
            ..ExperimentSpec::new("kepler", Method::Shbvm, 20, 2)
        };
        let r = run_experiment(&spec).unwrap();
        assert_eq!((r.k, r.s), (20, 11));
        assert_eq!(r.steps, 40);
        assert_eq!(r.gamma_norms.len(), 11);
        assert!(r.calibration.as_ref().unwrap().trials.len() >= 2);
        assert!(r.decay.unwrap().rho > 1.0);
        assert!(r.provenance.order_tolerance.is_some());
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["s"], 11);
        assert!(json["errors"]["e_H"].as_f64().unwrap() < 1e-13);
        assert!(json["errors"]["e_C"].is_null());
    }

    #[test]
    fn decay_figure_flags_stagnation() {
        let fig = decay_figure_data("kepler", 20, 16, &[5, 80], &IterationConfig::default()).unwrap();
        let coarse = &fig.series[0];
        let fine = &fig.series[1];
        assert!(coarse.stagnated.iter().all(|s| !s));
        assert!(fine.stagnated.iter().any(|&s| s));
        assert!(fine.stagnated[..5].iter().all(|s| !s));
        let e = coarse.estimate.unwrap();
        assert_abs_diff_eq!(coarse.model[0], e.kappa, epsilon = 1e-12);
        let csv = fig.to_csv();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 16);
    }

    #[test]
    fn trajectory_rows() {
        let p = crate::problems::KeplerProblem::default();
        let mut w = TrajectoryWriter::new(&p, Vec::new());
        w.start(0.0, &p.initial_state()).unwrap();
        w.observe(1, 0.1, &p.initial_state()).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,t,y1,y2,y3,y4,H,M,L");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,"));
    }
}
