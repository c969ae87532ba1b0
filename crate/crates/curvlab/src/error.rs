use thiserror::Error;

/// Errors produced by the curvature laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 2, got {0}")]
    InvalidDimension(usize),

    #[error("component array has length {got}, expected {expected} for dimension {dim}")]
    ShapeMismatch {
        dim: usize,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),

    #[error("point with |x| = {radius} lies outside the validity radius {validity}")]
    OutsideValidity { radius: f64, validity: f64 },

    #[error("metric is not positive definite at the evaluation point (eigenvalue {0})")]
    NotPositiveDefinite(f64),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("ansatz degree {got} is below the minimum {min}")]
    InvalidDegree { got: u32, min: u32 },

    #[error("assembly failure: {0}")]
    Assembly(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("fewer than two positive-energy rows; scaling exponent not applicable")]
    FitNotApplicable,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
