use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("source produced no usable input")]
    EmptySource,
    #[error("synthesis failed after {0} attempts")]
    SynthesisFailure(usize),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("unknown template id {0}")]
    UnknownTemplate(usize),
    #[error("invalid comparison order: {0}")]
    InvalidOrder(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

pub type Result<T> = core::result::Result<T, Error>;
