//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the pipeline.
///
/// Variants are grouped by how a caller should react: input problems
/// (parse/validation/usage) are the caller's fault and map to exit code 2 in
/// the command-line tool; the rest are numerical or statistical failures and
/// map to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("validation error{}: {msg}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Validation { row: Option<usize>, msg: String },

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),

    #[error("rank-deficient design: {0}")]
    Rank(String),

    #[error("bandwidth too small: only {effective} point(s) with positive kernel weight at p = {at}")]
    BandwidthTooSmall { at: f64, effective: usize },

    #[error("extrapolation: p = {p} lies outside the supported range [{lo}, {hi}]")]
    Extrapolation { p: f64, lo: f64, hi: f64 },

    #[error("infeasible constraint system (maximal violation {max_violation:.3e}); the moments are inconsistent with the shape restrictions")]
    Infeasible { max_violation: f64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("empty identified interval: lower {lower} exceeds upper {upper}")]
    EmptyInterval { lower: f64, upper: f64 },

    #[error("delta = {delta} is not strictly inside the bounds ({lower}, {upper})")]
    OutOfInterior { delta: f64, lower: f64, upper: f64 },

    #[error("mean dominance violated by the witness: gamma = {gamma} exceeds m1Y/m1S = {ratio}")]
    MeanDominanceViolation { gamma: f64, ratio: f64 },

    #[error("witness construction failed: {0}")]
    Construction(String),

    #[error("{failed} of {total} replicates failed (more than 10%); first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True when the error stems from bad input or flags rather than from the
    /// numerics; the command-line tool maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Csv(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Usage(_)
                | Error::Domain(_)
        )
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation { row: None, msg: msg.into() }
    }
}
