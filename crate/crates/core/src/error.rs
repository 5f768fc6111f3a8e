use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degree {degree} exceeds the basis maximum {max_degree}")]
    DegreeOutOfRange { degree: usize, max_degree: usize },

    #[error("abscissa {0} lies outside [0, 1]")]
    AbscissaOutOfRange(f64),

    #[error("quadrature node count {0} outside the supported range 1..=64")]
    NodeCountOutOfRange(usize),

    #[error("invalid HBVM parameters: s = {s}, k = {k} (need 1 <= s <= k)")]
    InvalidParameters { s: usize, k: usize },

    #[error("eigenvalue computation failed: {0}")]
    Eigensolver(String),

    #[error("singular linear system: {0}")]
    SingularMatrix(&'static str),

    #[error("vector field evaluation failed at stage {stage}: {reason}")]
    FieldEvaluation { stage: usize, reason: String },

    #[error("state left the problem domain at stage {stage}; retry with a smaller stepsize or degree")]
    DomainViolation { stage: usize },

    #[error("stage iteration diverged after {iterations} iterations (last residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("step {step} at t = {time} failed: {source}")]
    StepFailed {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("order selection failed: s_max = {s_max} reached without meeting the tolerance; reduce the stepsize (rho scales like 1/h)")]
    OrderSelection { s_max: usize },

    #[error("decay fit needs at least 3 coefficients above the round-off floor, got {0}")]
    InsufficientDecayData(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True when the failure came from the nonlinear stage iteration, possibly wrapped in a step error.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::OrderSelection { .. } | Error::DomainViolation { .. } => true,
            Error::StepFailed { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
