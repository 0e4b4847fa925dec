use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("block size {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid fixed-point format `{0}`")]
    InvalidFormat(String),

    #[error("invalid shift policy `{0}`")]
    InvalidPolicy(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("input sequence is empty")]
    EmptySequence,

    #[error("operator graph contains a cycle")]
    Cycle,

    #[error("operator `{name}` does not fit the platform budget even at parallelism 1")]
    Infeasible { name: String },
}

pub type Result<T> = std::result::Result<T, Error>;
