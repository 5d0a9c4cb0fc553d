//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("symbol {symbol} out of range for alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    #[error("operation requires at least one observation (t >= 1)")]
    EmptySummary,

    #[error("maximum likelihood estimate lies on the boundary of the mean polytope")]
    BoundaryMl,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weight function must be strictly positive, got {0}")]
    NonPositiveWeight(f64),

    #[error("prior `{prior}` is not conjugate for this family")]
    NonConjugate { prior: String },

    #[error("quadrature unsupported: {0}")]
    QuadratureUnsupported(String),

    #[error("asymptotic expansion out of its domain at t = {t} (a raw term is non-positive)")]
    ExpansionOutOfDomain { t: u64 },

    #[error("slope fit needs at least 4 points above the discrepancy floor, got {0}")]
    TooFewPoints(usize),

    #[error("invalid spec string `{spec}`: {reason}")]
    InvalidSpec { spec: String, reason: String },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
