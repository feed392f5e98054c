use alloc::string::String;

/// Errors raised by the estimation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("channel has zero energy")]
    ZeroEnergy,
    #[error("requested {requested} on-grid paths but only {available} grid points are admissible")]
    TooManyPaths { requested: usize, available: usize },
    #[error("estimator diverged at outer round {outer}, inner iteration {inner}: {reason}")]
    Diverged {
        outer: usize,
        inner: usize,
        reason: String,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        expected: expected.into(),
        got: got.into(),
    }
}
