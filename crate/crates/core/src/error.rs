use thiserror::Error;

pub type Result<T> = std::result::Result<T, FladError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FladError {
    #[error("gradient vectors are incompatible: {0}")]
    IncompatibleGradients(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid policy state: {0}")]
    PolicyState(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("io error: {0}")]
    Io(String),

    #[error("malformed suite file: {0}")]
    SuiteFormat(String),
}

impl From<std::io::Error> for FladError {
    fn from(e: std::io::Error) -> Self {
        FladError::Io(e.to_string())
    }
}
