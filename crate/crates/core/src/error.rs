use std::path::PathBuf;

use thiserror::Error;

use crate::linsys::Violation;
use crate::mapping::RangeViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the library. Messages are prefixed with the module
/// that raised them so the CLI can print them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("linsys: invalid system: {}", join(.0))]
    InvalidSystem(Vec<Violation>),

    #[error("linsys: dimension mismatch: {0}")]
    Dimension(String),

    #[error("linsys: invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error(
        "linsys: band unsatisfiable: no system with max conductance in {center} uS +/- {:.1}% \
         within the budget of {attempts} attempts",
        .tolerance * 100.0
    )]
    BandUnsatisfiable {
        attempts: usize,
        center: f64,
        tolerance: f64,
    },

    #[error("linalg: symmetric eigensolver did not converge on a {dim}x{dim} matrix")]
    EigenNoConvergence { dim: usize },

    #[error("mapping: conductance out of device range: {}", join(.0))]
    Range(Vec<RangeViolation>),

    #[error(
        "mapping: beta = {beta} violates the D-matrix stability condition \
         (D_ii > (Ks_ii + sum_j |A_ji|) / 2 requires beta >= 0.5)"
    )]
    BetaTooSmall { beta: f64 },

    #[error("mapping: invalid option: {0}")]
    InvalidOption(String),

    #[error("simulate: singular nodal matrix; floating nodes {floating:?}")]
    SingularNetwork { floating: Vec<usize> },

    #[error("simulate: steady-state iteration did not converge (residual {residual:.3e})")]
    NoConvergence { residual: f64 },

    #[error("simulate: integrator step failed at t = {time:.6e} s (dt fell below {dt_min:.3e} s)")]
    StepFailure { time: f64, dt_min: f64 },

    #[error("simulate: invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io: {path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io: unsupported: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("io: json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: csv: {0}")]
    Csv(#[from] csv::Error),
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
