use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error in {op}: input {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("variable does not belong to this tape")]
    ForeignVar,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::DegenerateFilter(_) | Error::NonFinite(_)
        )
    }
}
