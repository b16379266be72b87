//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by the CLI for machine-readable exit reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid configuration or unknown option.
    Config,
    /// Argument outside its mathematical/physical domain.
    Domain,
    /// Mismatched array shapes or index out of range.
    Shape,
    /// Inconsistent operator/DOF bookkeeping during assembly.
    Assembly,
    /// Linear or nonlinear solver failure.
    Solver,
    /// Filesystem or serialization failure.
    Io,
}

impl ErrorCategory {
    /// Stable lowercase tag for machine consumption.
    pub fn tag(&self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Domain => "domain",
            ErrorCategory::Shape => "shape",
            ErrorCategory::Assembly => "assembly",
            ErrorCategory::Solver => "solver",
            ErrorCategory::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("Newton–Raphson did not converge at load factor {load_factor}: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        load_factor: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("Newton–Raphson diverged at load factor {load_factor}: residual grew to {residual:.3e} (threshold {threshold:.1e})")]
    Divergence {
        load_factor: f64,
        residual: f64,
        threshold: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_) => ErrorCategory::Domain,
            Error::Shape(_) => ErrorCategory::Shape,
            Error::Config(_) => ErrorCategory::Config,
            Error::Assembly(_) => ErrorCategory::Assembly,
            Error::Singular(_) | Error::NonConvergence { .. } | Error::Divergence { .. } => {
                ErrorCategory::Solver
            }
            Error::Io(_) | Error::Serde(_) => ErrorCategory::Io,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
