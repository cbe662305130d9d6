use thiserror::Error;

pub type Result<T> = std::result::Result<T, ImmpcError>;

#[derive(Debug, Error)]
pub enum ImmpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("regulation problem not well-defined: {0}")]
    RegulationIllPosed(String),
    #[error("filter numerator not Schur (spectral radius {0:.6})")]
    NotSchur(f64),
    #[error("optimization problem infeasible: {0}")]
    Infeasible(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ImmpcError::Dimension(msg.into()))
}
