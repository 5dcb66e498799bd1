use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    Numerical { rows: usize, cols: usize },

    #[error("invalid selector: {0}")]
    InvalidSelector(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible layout: {0}")]
    Infeasible(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// κ = 0 or κ_T = 0 where a ratio is required.
    #[error("degenerate task: {0}")]
    Degenerate(String),

    /// A quantity requested inside a forbidden band where it is not defined.
    #[error("undefined in forbidden band: {0}")]
    Band(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
