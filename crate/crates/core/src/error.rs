use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the stage that raises them so front ends can map
/// them onto coarse categories (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("input file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("column `{0}` not found in input header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: non-finite covariate value")]
    NonFinite { row: usize, column: String },

    #[error("row {row}: treatment label `{label}` is not one of the declared labels")]
    UnknownLabel { row: usize, label: String },

    #[error("treatment group `{0}` has no units")]
    EmptyGroup(String),

    #[error("outcome required: the sample was loaded without an outcome column")]
    OutcomeRequired,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("propensity row {row} sums to {sum} (must be 1 within 1e-10)")]
    Normalization { row: usize, sum: f64 },

    #[error("propensity entry ({row}, {col}) = {value} is not strictly inside (0, 1); overlap is violated")]
    Positivity { row: usize, col: usize, value: f64 },

    #[error("design matrix is rank deficient; offending columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("{n} units cannot identify {params} parameters")]
    TooFewUnits { n: usize, params: usize },

    #[error("GPS fit did not converge after {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("group {group} has zero total weight under scheme `{scheme}`")]
    ZeroWeightMass { group: String, scheme: String },

    #[error("scheme `{scheme}` does not support {what}: {reason}")]
    UnsupportedScheme {
        scheme: String,
        what: &'static str,
        reason: &'static str,
    },

    #[error("intercept calibration failed: {0}")]
    Calibration(String),

    #[error("bootstrap gave up after {redraws} redraws of degenerate resamples")]
    BootstrapExhausted { redraws: usize },

    #[error(
        "{failed} of {reps} Monte Carlo replicates failed (limit is 1%); first failure: {first}"
    )]
    FailureRate {
        failed: usize,
        reps: usize,
        first: String,
    },
}

/// Coarse error classes used for exit codes and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Numerical,
    Incompatible,
    Simulation,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::MissingFile(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::NonFinite { .. }
            | Error::UnknownLabel { .. }
            | Error::EmptyGroup(_)
            | Error::OutcomeRequired
            | Error::InvalidInput(_)
            | Error::Dimension { .. } => ErrorCategory::Input,
            Error::Normalization { .. }
            | Error::Positivity { .. }
            | Error::RankDeficient { .. }
            | Error::TooFewUnits { .. }
            | Error::NotConverged { .. }
            | Error::Singular(_)
            | Error::ZeroWeightMass { .. }
            | Error::Calibration(_)
            | Error::BootstrapExhausted { .. } => ErrorCategory::Numerical,
            Error::UnsupportedScheme { .. } => ErrorCategory::Incompatible,
            Error::FailureRate { .. } => ErrorCategory::Simulation,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
