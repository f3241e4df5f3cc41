use thiserror::Error;

/// Errors raised across the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{op} did not converge after {iterations} iterations (last estimate {last})")]
    Convergence {
        op: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("unsupported recurrence depth {depth} for {op}")]
    UnsupportedDepth { op: &'static str, depth: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(
        op: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Prefix a numeric fault with extra provenance, e.g. the time step.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::NumericFault(msg) => Error::NumericFault(format!("{ctx}: {msg}")),
            other => other,
        }
    }
}
