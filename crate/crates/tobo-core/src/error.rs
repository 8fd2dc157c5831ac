use alloc::string::String;
use core::fmt;

/// Errors surfaced by the surrogate models and optimization loops.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A shape, dimension or length did not match what the operation needs.
    Shape(String),
    /// A parameter value violated its domain (non-positive variance, empty
    /// candidate list, malformed selection vector, ...).
    Invalid(String),
    /// A symmetric factorization failed even after the jitter ladder.
    Numerical(String),
    /// A combinatorial enumeration would exceed the configured guard.
    EnumerationGuard { combinations: u128, limit: u128 },
    /// An unknown hyperparameter identifier was requested.
    UnknownParam(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::EnumerationGuard {
                combinations,
                limit,
            } => write!(
                f,
                "enumeration of {combinations} super-arms exceeds the guard of {limit}; \
                 use greedy mode"
            ),
            Error::UnknownParam(msg) => write!(f, "unknown hyperparameter: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid_err(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn numerical_err(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}
