use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside the unit interval: {0}")]
    Domain(f64),

    #[error("invalid parameter for {family}: {detail}")]
    InvalidParameter { family: &'static str, detail: String },

    #[error("root solve did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("operation requires {expected} pair copulas, found {found}")]
    FamilyMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid vine structure: {0}")]
    Structure(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not enough support points: {0}")]
    Support(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
