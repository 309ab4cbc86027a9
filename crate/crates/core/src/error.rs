use thiserror::Error;

/// Errors produced by the localization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("no leaves")]
    NoLeaves,
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown value `{value}` for attribute `{attr}`")]
    UnknownValue { attr: String, value: String },
    #[error("invalid measure: {0}")]
    Measure(String),
    #[error("undefined value: {0}")]
    Undefined(String),
    #[error("meaningless pair: real and forecast are both zero")]
    MeaninglessPair,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty candidate: no combination has a positive descended ratio")]
    EmptyCandidate,
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
