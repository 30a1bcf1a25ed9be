use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimensions: d = {d}, ell = {ell} (need 1 <= ell <= d)")]
    Dimension { d: usize, ell: usize },

    #[error("degenerate random sample in {0} generator after one retry")]
    DegenerateSample(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("objective returned non-finite value {value} at point {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("objective `{0}` is already registered")]
    DuplicateName(String),

    #[error("unknown objective `{0}`")]
    UnknownName(String),

    #[error("objective `{name}` failed validation: {reason}")]
    Validation { name: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
