use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("enumeration limit exceeded: {0}")]
    LimitExceeded(String),

    #[error("value undefined: {0}")]
    Undefined(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Stable machine-readable code, used by the CLI error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "E_INPUT",
            Error::Dimension { .. } => "E_DIMENSION",
            Error::Convergence { .. } => "E_CONVERGENCE",
            Error::Divergence { .. } => "E_DIVERGENCE",
            Error::LimitExceeded(_) => "E_LIMIT",
            Error::Undefined(_) => "E_UNDEFINED",
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
