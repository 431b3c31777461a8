use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hydrostatic constraint violated: residual {residual:.3e} exceeds {tolerance:.1e}")]
    ConstraintViolation { residual: f64, tolerance: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("member {member} failed: {source}")]
    MemberFailed {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
