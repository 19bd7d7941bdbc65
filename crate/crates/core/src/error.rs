use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A precondition of an operation was violated by the caller.
    #[error("contract violated: {0}")]
    Contract(String),
    /// A NaN or infinity appeared in a forward value or a gradient.
    #[error("non-finite value produced by {op} during {phase}")]
    NonFinite { op: &'static str, phase: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed data at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
