use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("solver failure at time index {index}: {source}")]
    AtTimeIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("continuation level {level} ({nx}x{ny}x{nt}) failed: {source}")]
    AtLevel {
        level: usize,
        nx: usize,
        ny: usize,
        nt: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

/// Machine-readable failure category; doubles as the CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config = 2,
    Solver = 3,
    Io = 4,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::Parse(_) | Error::ShapeMismatch(_) => {
                ErrorCategory::Config
            }
            Error::NonConvergence { .. } | Error::VerificationFailed(_) => ErrorCategory::Solver,
            Error::AtTimeIndex { source, .. } | Error::AtLevel { source, .. } => source.category(),
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    pub fn at_time(self, index: usize) -> Error {
        Error::AtTimeIndex {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl ErrorCategory {
    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Solver => "solver",
            ErrorCategory::Io => "io",
        }
    }
}
