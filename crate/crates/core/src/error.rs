use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("matrix is singular or too ill-conditioned: min eigenvalue {min_eig:e}, max eigenvalue {max_eig:e}")]
    Singular { min_eig: f64, max_eig: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing CSV columns: {0:?}")]
    MissingColumns(Vec<String>),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
