use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library. Variants map one-to-one onto the
/// failure modes of the individual operations so callers (and the CLI exit
/// code mapping) can tell validation problems from runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("eigendecomposition did not converge after {sweeps} sweeps (off-norm {off_norm:.3e})")]
    EigenNoConvergence { sweeps: usize, off_norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid threshold {0}: must be finite and non-negative")]
    InvalidThreshold(f64),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("invalid subsample size {keep} for {n} subjects")]
    InvalidSubsample { keep: usize, n: usize },
    #[error("invalid feature matrix: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trace does not match model: {0}")]
    TraceMismatch(String),
    #[error("training diverged at epoch {epoch} (last stable epoch {last_stable:?})")]
    Divergence { epoch: usize, last_stable: Option<usize> },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("kernel error: {0}")]
    KernelError(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical or I/O
    /// failures during an otherwise valid run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidMatrix(_)
                | Error::DimensionError { .. }
                | Error::InvalidRange(_)
                | Error::InsufficientSamples { .. }
                | Error::InvalidThreshold(_)
                | Error::InvalidSubsample { .. }
                | Error::InvalidData(_)
                | Error::InvalidConfig(_)
                | Error::TraceMismatch(_)
                | Error::Parse { .. }
        )
    }

    /// Short stable identifier for machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::EigenNoConvergence { .. } => "EigenNoConvergence",
            Error::DimensionError { .. } => "DimensionError",
            Error::InvalidRange(_) => "InvalidRange",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::InvalidThreshold(_) => "InvalidThreshold",
            Error::DegenerateCovariance(_) => "DegenerateCovariance",
            Error::InvalidSubsample { .. } => "InvalidSubsample",
            Error::InvalidData(_) => "InvalidData",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::TraceMismatch(_) => "TraceMismatch",
            Error::Divergence { .. } => "DivergenceError",
            Error::DegenerateFit(_) => "DegenerateFit",
            Error::DegenerateDesign(_) => "DegenerateDesign",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::KernelError(_) => "KernelError",
            Error::DegenerateEmbedding(_) => "DegenerateEmbedding",
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
            Error::Serde(_) => "SerdeError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionError { expected, got })
    }
}
