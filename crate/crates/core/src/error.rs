use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("far-point search exhausted: the model is not superlinear on this grid")]
    FarPointExhausted,

    #[error("inadmissible input: {0}")]
    Inadmissible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
