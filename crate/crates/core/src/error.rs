use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row {line} in {file}: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("expiry calendar inconsistent on {date}: {reason}")]
    CalendarInconsistent { date: NaiveDate, reason: String },
    #[error("futures and spot files share no usable dates")]
    EmptyIntersection,
    #[error("date {date} outside roll interval [{prev}, {front}]")]
    BadInterval {
        date: NaiveDate,
        prev: NaiveDate,
        front: NaiveDate,
    },
    #[error("need at least {needed} observations, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("non-positive constant-maturity price on {date}")]
    NonPositiveCmf { date: NaiveDate },
    #[error("too few samples for mode estimate: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lagged scatter matrix is singular (reciprocal condition {rcond:e})")]
    SingularCovariate { rcond: f64 },
    #[error("transition matrix is not stationary (spectral radius {radius})")]
    NonStationary { radius: f64 },
    #[error("utility inverse undefined at {value}")]
    DomainError { value: f64 },
    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("portfolio value {value} is not positive on step {step}")]
    Bankrupt { step: usize, value: f64 },
    #[error("need at least {needed} dates for {k} folds, got {got}")]
    TooFewDates { needed: usize, got: usize, k: usize },
    #[error("reference series is missing date {date}")]
    DateCoverage { date: NaiveDate },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRow { .. } => "malformed_row",
            Error::CalendarInconsistent { .. } => "calendar_inconsistent",
            Error::EmptyIntersection => "empty_intersection",
            Error::BadInterval { .. } => "bad_interval",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::NonPositiveCmf { .. } => "non_positive_cmf",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SingularCovariate { .. } => "singular_covariate",
            Error::NonStationary { .. } => "non_stationary",
            Error::DomainError { .. } => "domain_error",
            Error::DivergedLoss { .. } => "diverged_loss",
            Error::Bankrupt { .. } => "bankrupt",
            Error::TooFewDates { .. } => "too_few_dates",
            Error::DateCoverage { .. } => "date_coverage",
            Error::Config(_) => "config",
            Error::Serde(_) => "serde",
            Error::Csv(_) => "csv",
        }
    }
}
