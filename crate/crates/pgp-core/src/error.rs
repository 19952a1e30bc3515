use thiserror::Error;

/// Errors produced by model construction, estimators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("map parse error at row {row}, col {col}: {msg}")]
    MapParse { row: usize, col: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("problem size {size} exceeds the oracle guardrail {limit}")]
    OracleGuardrail { size: usize, limit: usize },

    #[error("optimum certificate unavailable: {0}")]
    MissingCertificate(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
