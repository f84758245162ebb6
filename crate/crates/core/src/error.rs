use thiserror::Error;

/// Errors produced by the recovery library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("support enumeration needs {count} subsets (limit {limit}); use the Monte-Carlo estimator instead")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("ground truth was not supplied to the run")]
    MissingTruth,

    #[error("iterates were not recorded in the trace")]
    MissingIterates,

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("theorem hypothesis violated: delta * beta = {0} >= 1")]
    ContractionViolated(f64),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context, expected, got });
    }
    Ok(())
}
