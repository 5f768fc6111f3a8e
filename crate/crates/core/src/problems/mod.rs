//! Benchmark problems and the name registry used by the CLI.

mod kepler;
mod lotka;
mod stiff;

pub use kepler::KeplerProblem;
pub use lotka::LotkaVolterraProblem;
pub use stiff::StiffLinearProblem;

use crate::error::{Error, Result};
use crate::problem::OdeProblem;

pub const PROBLEM_NAMES: [&str; 3] = ["kepler", "lotka-volterra", "stiff"];

pub fn problem_by_name(name: &str) -> Result<Box<dyn OdeProblem>> {
    match name {
        "kepler" => Ok(Box::new(KeplerProblem::default())),
        "lotka-volterra" | "lotka" => Ok(Box::new(LotkaVolterraProblem::default())),
        "stiff" => Ok(Box::new(StiffLinearProblem::default())),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}
