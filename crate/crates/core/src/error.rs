use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {ijk:?} out of range for grid {dims:?}")]
    IndexOutOfRange { ijk: [usize; 3], dims: [usize; 3] },

    #[error("state {state} out of range for {n_states} states")]
    StateOutOfRange { state: usize, n_states: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// The requested Markov step moves more mass out of some cell than it holds.
    #[error("time step {dt} violates the stability bound; maximum admissible dt is {max_dt}")]
    Unstable { dt: f64, max_dt: f64 },

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("distribution fit failed: {0}")]
    Fit(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("transport error {error:e} for scenario {scenario} exceeds tolerance {tolerance:e}")]
    ToleranceExceeded {
        scenario: usize,
        error: f64,
        tolerance: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for a breached validation tolerance, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ToleranceExceeded { .. } => 3,
            _ => 2,
        }
    }
}
