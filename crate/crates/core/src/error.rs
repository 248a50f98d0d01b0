//! Error type shared across the estimation pipeline.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A series was too short, contained non-finite values, or was otherwise
    /// unusable as input.
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    /// A requested lag (embedding order or autocovariance lag) does not fit
    /// in the series.
    #[error("lag {lag} too large for series of length {n}")]
    LagTooLarge { lag: usize, n: usize },

    /// The Toeplitz covariance matrix could not be factorized even after the
    /// ridge fallback.
    #[error("covariance matrix is numerically singular (p = {p})")]
    SingularSigma { p: usize },

    /// `k = 0` requested for a conditional covariance; the conditional law of
    /// a window given itself is degenerate.
    #[error("conditional covariance requires k >= 1")]
    DegenerateConditional,

    /// A coordinate has zero sample standard deviation, so no bandwidth can
    /// be formed for it.
    #[error("coordinate {coord} has zero sample standard deviation")]
    DegenerateCoordinate { coord: usize },

    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A conditional-gradient pair (t, s) with k = s - t outside 1..p-1.
    #[error("invalid pair: k = {k} must satisfy 1 <= k < p = {p}")]
    InvalidPair { k: usize, p: usize },

    /// Every pair was excluded by the trimming threshold.
    #[error("all pairs excluded by trimming threshold")]
    AllTrimmed,

    /// A subspace dimension outside 1..=p was requested.
    #[error("bad subspace dimension d = {d} for ambient dimension p = {p}")]
    BadDimension { d: usize, p: usize },

    /// Bootstrap block length exceeds the series length (or is zero).
    #[error("block length {block_len} invalid for series of length {n}")]
    BlockTooLong { block_len: usize, n: usize },

    /// Model selection could not produce a usable candidate.
    #[error("selection failed: {0}")]
    SelectionFailed(String),

    /// A simulated path exceeded the explosion guard.
    #[error("explosive simulated path at step {step} (|value| > 1e12); use a different seed")]
    ExplosivePath { step: usize },

    /// Input CSV could not be parsed.
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },

    /// A count was non-positive where a log10 transform is required.
    #[error("non-positive count at row {row}: log10 undefined")]
    NonPositiveCount { row: usize },

    /// A response value was non-positive where relative fit metrics divide
    /// by it.
    #[error("non-positive response at index {index}: relative metrics undefined")]
    NonPositiveResponse { index: usize },

    /// Invalid configuration of an operation (bad grid, empty candidate set,
    /// inconsistent options).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Estimation failed inside a named pipeline stage.
    #[error("pipeline stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Filesystem error while reading input or writing reports.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed user input rather than a failure
    /// of the estimation itself (used by the CLI to pick exit codes).
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::CsvParse { .. }
            | Error::NonPositiveCount { .. }
            | Error::InvalidConfig(_)
            | Error::InvalidSeries(_)
            | Error::Io(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
