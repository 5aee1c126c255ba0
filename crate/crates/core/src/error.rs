use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric routine produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The budget or payment requirement cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The estimator or design hit a degenerate configuration (zero weight, singular matrix).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// An iterative optimizer failed to converge.
    #[error("optimization did not converge: {0}")]
    Optimization(String),

    /// Input data violates a required invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// A requested value lies outside the range covered by the data.
    #[error("extrapolation: {0}")]
    Extrapolation(String),

    /// Configuration file could not be read or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn check_probability(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return domain(format!("{name} must lie in [0, 1], got {value}"));
    }
    Ok(())
}
