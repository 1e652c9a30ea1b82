use alloc::string::String;

/// Errors raised by the simulator, the learning stack and the controller.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid internal state: {0}")]
    InvalidState(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing target `{0}`")]
    MissingTarget(String),
    #[error("models unavailable: {0}")]
    ModelsUnavailable(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_input {
    ($($arg:tt)*) => { $crate::error::Error::InvalidInput(alloc::format!($($arg)*)) };
}
macro_rules! invalid_config {
    ($($arg:tt)*) => { $crate::error::Error::InvalidConfig(alloc::format!($($arg)*)) };
}
macro_rules! invalid_state {
    ($($arg:tt)*) => { $crate::error::Error::InvalidState(alloc::format!($($arg)*)) };
}
pub(crate) use {invalid_config, invalid_input, invalid_state};
