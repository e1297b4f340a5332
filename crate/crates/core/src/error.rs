//! Error type shared by every module in the crate.

use std::fmt;

/// Crate-wide error enum. Variants map onto the failure classes of the
/// public operations; callers that need exit codes can match on them.
#[derive(Debug)]
pub enum Error {
    /// A vector or matrix argument has the wrong length/shape.
    InvalidShape(String),
    /// A background-mask index falls outside the input dimension.
    InvalidMask(String),
    /// A configuration value violates a documented invariant.
    InvalidConfig(String),
    /// A batch cannot support the requested estimate (e.g. a fairness
    /// group is absent). Callers typically skip the batch.
    DegenerateBatch(String),
    /// A metric is undefined for the given labels (e.g. AUROC with a
    /// single class present).
    DegenerateLabels(String),
    /// A numerical routine broke down (non-finite value, Cholesky failure).
    NumericalFailure(String),
    /// A binary file does not conform to its format; `offset` is the byte
    /// position at which parsing failed.
    Format { offset: u64, msg: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidShape(msg) => write!(f, "invalid shape: {msg}"),
            Error::InvalidMask(msg) => write!(f, "invalid mask: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::DegenerateBatch(msg) => write!(f, "degenerate batch: {msg}"),
            Error::DegenerateLabels(msg) => write!(f, "degenerate labels: {msg}"),
            Error::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
            Error::Format { offset, msg } => {
                write!(f, "format error at byte {offset}: {msg}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
