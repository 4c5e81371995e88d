use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: header implies {expected} bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: need at least {needed} samples, have {actual}")]
    InsufficientSamples {
        context: &'static str,
        needed: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported artifact schema version {found} (this build reads {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),

    #[error("artifact holds {found}, expected {expected}")]
    WrongPayload {
        expected: &'static str,
        found: &'static str,
    },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("basis columns are not orthonormal (||QᵀQ - I||_F = {0:e})")]
    NotOrthonormal(f64),

    #[error("degenerate input in {stage}{}", row_suffix(*.row))]
    Degenerate {
        stage: &'static str,
        row: Option<usize>,
    },

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn degenerate(stage: &'static str) -> Self {
        Error::Degenerate { stage, row: None }
    }

    pub fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    /// Attaches a row index to a degeneracy error raised by a per-row operator.
    pub fn at_row(self, row: usize) -> Self {
        match self {
            Error::Degenerate { stage, .. } => Error::Degenerate {
                stage,
                row: Some(row),
            },
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::NotSymmetric(_)
            | Error::NotOrthonormal(_)
            | Error::Degenerate { .. }
            | Error::Diverged { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
