use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("quantizer did not converge (residual {residual:e})")]
    QuantizerFailed { residual: f64 },

    #[error("malformed grid file at line {line}: {msg}")]
    GridFormat { line: usize, msg: String },

    #[error("quadrature weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("memory estimate {estimate} bytes exceeds budget {budget} bytes")]
    MemoryBudget { estimate: u64, budget: u64 },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("non-finite network parameter at index {0}")]
    NonFiniteParameter(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    /// Whether the failure is numerical (as opposed to usage or resources).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SimulationDiverged { .. }
                | Error::QuantizerFailed { .. }
                | Error::LinearSolver(_)
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteParameter(_)
        )
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
