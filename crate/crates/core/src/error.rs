use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StokesError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical breakdown in {context} after {iterations} iterations")]
    NumericalBreakdown { context: String, iterations: usize },

    #[error("{context}: solver did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("dense assembly refused: {rows}x{cols} exceeds the size guard")]
    SizeGuard { rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, StokesError>;
