use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes of parameters, points or gradients do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A parameter is outside of its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A point lies outside of the problem domain.
    #[error("point outside domain: {0}")]
    Domain(String),
    /// A required collocation group or label set is missing.
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values showed up where finite ones are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// A linear system could not be solved.
    #[error("singular system: {0}")]
    Singular(String),
}

pub type Result<T> = core::result::Result<T, Error>;
