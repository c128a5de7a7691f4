use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("block {block} is not symmetric")]
    NonSymmetric { block: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular matrix: {block}")]
    Singular { block: String },
    #[error("nonpositive argument: {0}")]
    NonPositive(String),
    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("integration halted at x = {x}: {reason}")]
    Integration { x: f64, reason: String },
    #[error("matching failure: {0}")]
    Matching(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn singular(block: &str) -> Error {
    Error::Singular { block: block.to_string() }
}
