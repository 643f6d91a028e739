//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Scan geometry that violates a precondition (empty axes, parallel
    /// plane axes, non-positive radius, duplicate points, ...).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// A dataset file that does not match the CSV schema. `row` is the
    /// 1-based data row (first row after the column header).
    #[error("schema error{}: {msg}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Schema { row: Option<usize>, msg: String },

    /// Observation point coincides with a source (or its ground image).
    #[error("singular field evaluation: observation point within {0} m of a source")]
    Singularity(f64),

    /// Transfer matrix too ill-conditioned to invert reliably.
    #[error("ill-conditioned transfer matrix (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    /// Relative error is undefined (all-zero measured field).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Vector/matrix dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Bad solver/GA/run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operation outside the supported model (e.g. moment integral of a
    /// non-half-wave antenna).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
