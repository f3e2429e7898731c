use std::path::PathBuf;

use thiserror::Error;

use crate::data::YearMonth;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown transformation code {0}")]
    UnknownTransformCode(i64),

    #[error("series `{series}`: non-positive level {value} at row {row} cannot be log-transformed")]
    NonPositiveLevel { series: String, row: usize, value: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("series `{series}` has an interior missing value at {date}")]
    InteriorMissing { series: String, date: YearMonth },

    #[error("dates are not a gap-free monthly sequence: {0}")]
    BadDates(String),

    #[error("insufficient observations: need more than {needed}, have {have}")]
    InsufficientObservations { needed: usize, have: usize },

    #[error("unknown series `{0}`")]
    UnknownSeries(String),

    #[error("matrix is not positive definite after maximum jitter ({0})")]
    NotPositiveDefinite(String),

    #[error("sampler failed at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("forecast simulation failed: {aborted} of {total} paths were non-finite")]
    NonFinitePaths { aborted: usize, total: usize },

    #[error("forecast sets are not aligned: {0}")]
    Misaligned(String),

    #[error("no realization for {date}")]
    MissingRealization { date: YearMonth },

    #[error("coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("run directory {dir} is incomplete: {detail}")]
    IncompleteRun { dir: PathBuf, detail: String },

    #[error("{failed} of {total} forecast origins failed (first: {first})")]
    TooManyFailedOrigins {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.to_string(),
        }
    }

    /// Short stable identifier used in machine-readable error summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnknownTransformCode(_) => "unknown_tcode",
            Error::NonPositiveLevel { .. } => "non_positive_level",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::InteriorMissing { .. } => "interior_missing",
            Error::BadDates(_) => "bad_dates",
            Error::InsufficientObservations { .. } => "insufficient_observations",
            Error::UnknownSeries(_) => "unknown_series",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::Chain { .. } => "chain_failure",
            Error::NonFinitePaths { .. } => "non_finite_paths",
            Error::Misaligned(_) => "misaligned",
            Error::MissingRealization { .. } => "missing_realization",
            Error::CoverageMismatch(_) => "coverage_mismatch",
            Error::Empty(_) => "empty",
            Error::Format { .. } => "format",
            Error::IncompleteRun { .. } => "incomplete_run",
            Error::TooManyFailedOrigins { .. } => "too_many_failed_origins",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}
