mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use shbvm::harness::{
    convergence_table, decay_figure_data, parse_policy, run_experiment_with, ExperimentSpec, Method, OutputFormat,
    TrajectoryWriter,
};
use shbvm::problems::problem_by_name;
use shbvm::{CoefficientCache, Error, HbvmCoefficients, IterationConfig, Observer, Scheme};

use config::ConfigFile;

/// When set, every result is also written to a file in this directory.
const OUT_DIR_ENV: &str = "SHBVM_OUT_DIR";

#[derive(Parser)]
#[command(name = "shbvm", version, about = "Spectral HBVM time integration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one problem and report invariant and solution errors.
    Run(RunArgs),
    /// Run a sequence of doubling n and report errors with convergence rates.
    Table(RunArgs),
    /// Coefficient norms of one HBVM(k,s) step for several stepsizes, with the decay fit.
    Figure(FigureArgs),
    /// Print the Butcher tableau of HBVM(k,s) as JSON.
    Tableau(TableauArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// kepler, lotka-volterra or stiff.
    #[arg(long)]
    problem: Option<String>,
    /// shbvm, hbvm:k,s or gauss:s.
    #[arg(long)]
    method: Option<String>,
    /// Steps per period; `table` takes a comma-separated doubling list.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    periods: Option<usize>,
    /// Order-selection tolerance for shbvm.
    #[arg(long)]
    tol: Option<f64>,
    /// blended, newton or fixed-point.
    #[arg(long)]
    iteration: Option<String>,
    /// fresh-each-step, frozen-linear-part or frozen-first-step.
    #[arg(long)]
    jacobian: Option<String>,
    #[arg(long)]
    residual_tolerance: Option<f64>,
    /// csv, json or table.
    #[arg(long)]
    out: Option<String>,
    /// Attach the decay fit of the first-step coefficients.
    #[arg(long)]
    seed_figure: bool,
    /// Write every step as CSV to this file (`run` only).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Leave the time column empty so repeated runs give identical output.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct FigureArgs {
    #[arg(long, default_value = "kepler")]
    problem: String,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    s: usize,
    #[arg(long, default_value = "5,10,20,40,80", value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, default_value = "table")]
    out: String,
}

#[derive(Args)]
struct TableauArgs {
    #[arg(long)]
    s: usize,
    /// Defaults to `s` (the Gauss method).
    #[arg(long)]
    k: Option<usize>,
}

struct Failure {
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_divergence() { 2 } else { 1 };
        Self {
            message: e.to_string(),
            code,
        }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Self { message, code: 1 }
    }
}

fn merged<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<Option<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    match (flag, cfg.get(key)) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(text)) => text
            .parse()
            .map(Some)
            .map_err(|e| format!("config key '{key}': {e}").into()),
        (None, None) => Ok(None),
    }
}

struct Resolved {
    base: ExperimentSpec,
    ns: Vec<usize>,
}

fn resolve(args: &RunArgs) -> Result<Resolved, Failure> {
    let cfg = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let problem: String = merged(args.problem.clone(), &cfg, "problem")?.unwrap_or_else(|| "kepler".into());
    let method: Method = merged(args.method.clone(), &cfg, "method")?
        .map(|m: String| m.parse())
        .transpose()?
        .unwrap_or(Method::Shbvm);
    let n_text: String = merged(args.n.clone(), &cfg, "n")?.ok_or_else(|| "missing --n".to_string())?;
    let ns = n_text
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| format!("invalid n '{v}'")))
        .collect::<Result<Vec<_>, _>>()?;
    let periods = merged(args.periods, &cfg, "periods")?.unwrap_or(1);

    let mut spec = ExperimentSpec::new(&problem, method, ns[0], periods);
    if let Some(tol) = merged(args.tol, &cfg, "tol")? {
        spec.spectral.tolerance = tol;
    }
    if let Some(scheme) = merged::<String>(args.iteration.clone(), &cfg, "iteration")? {
        spec.iteration.scheme = scheme.parse::<Scheme>()?;
    }
    if let Some(policy) = merged::<String>(args.jacobian.clone(), &cfg, "jacobian")? {
        spec.iteration.jacobian_policy = parse_policy(&policy)?;
    }
    if let Some(tol) = merged(args.residual_tolerance, &cfg, "residual-tolerance")? {
        spec.iteration = IterationConfig {
            residual_tolerance: tol,
            stall_tolerance: spec.iteration.stall_tolerance.max(tol),
            ..spec.iteration
        };
    }
    if let Some(out) = merged::<String>(args.out.clone(), &cfg, "out")? {
        spec.output = out.parse::<OutputFormat>()?;
    }
    spec.decay = args.seed_figure;
    spec.validate()?;
    Ok(Resolved { base: spec, ns })
}

fn emit(text: &str, stem: &str, format: OutputFormat) -> Result<(), Failure> {
    print!("{text}");
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let path = dir.join(format!("{stem}.{}", format.extension()));
        std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn file_stem(spec: &ExperimentSpec, ns: &[usize]) -> String {
    let method = spec.method.to_string().replace([':', ','], "-");
    let n = ns.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
    format!("{}_{method}_n{n}_p{}", spec.problem, spec.periods)
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let Resolved { base, ns } = resolve(args)?;
    if ns.len() != 1 {
        return Err("run takes a single --n; use table for a sequence".to_string().into());
    }
    let cache = CoefficientCache::new();
    let report = match &args.trajectory {
        Some(path) => run_with_trajectory(&base, &cache, path)?,
        None => run_experiment_with(&base, &cache, &mut [])?,
    };
    emit(&report.render(base.output, !args.no_timing), &file_stem(&base, &ns), base.output)
}

fn run_with_trajectory(spec: &ExperimentSpec, cache: &CoefficientCache, path: &Path) -> Result<shbvm::harness::RunReport, Failure> {
    let problem = problem_by_name(&spec.problem)?;
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut writer = TrajectoryWriter::new(problem.as_ref(), BufWriter::new(file));
    writer.start(0.0, &problem.initial_state())?;
    let report = {
        let mut observers: [&mut dyn Observer; 1] = [&mut writer];
        run_experiment_with(spec, cache, &mut observers)?
    };
    use std::io::Write;
    writer
        .into_inner()
        .flush()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(report)
}

fn table(args: &RunArgs) -> Result<(), Failure> {
    if args.trajectory.is_some() {
        return Err("--trajectory is only supported by run".to_string().into());
    }
    let Resolved { base, ns } = resolve(args)?;
    let specs: Vec<_> = ns.iter().map(|&n| ExperimentSpec { n, ..base.clone() }).collect();
    for s in &specs {
        s.validate()?;
    }
    let table = convergence_table(&specs)?;
    emit(&table.render(base.output, !args.no_timing), &format!("table_{}", file_stem(&base, &ns)), base.output)
}

fn figure(args: &FigureArgs) -> Result<(), Failure> {
    let format: OutputFormat = args.out.parse()?;
    let fig = decay_figure_data(&args.problem, args.k, args.s, &args.n, &IterationConfig::default())?;
    let stem = format!("figure_{}_hbvm-{}-{}", args.problem, args.k, args.s);
    emit(&fig.render(format), &stem, format)
}

fn tableau(args: &TableauArgs) -> Result<(), Failure> {
    let coeffs = HbvmCoefficients::new(args.s, args.k.unwrap_or(args.s))?;
    let mut json = coeffs.tableau().to_json();
    json.push('\n');
    emit(&json, &format!("tableau_hbvm-{}-{}", coeffs.k(), coeffs.s()), OutputFormat::Json)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run(a),
        Command::Table(a) => table(a),
        Command::Figure(a) => figure(a),
        Command::Tableau(a) => tableau(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
