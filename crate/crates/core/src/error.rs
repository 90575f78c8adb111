use thiserror::Error;

use crate::estimate::FitResult;
use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("inadmissible parameters: {}", format_violations(.0))]
    InvalidParams(Vec<Violation>),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("non-finite intensity at t = {t}")]
    NumericOverflow { t: usize },

    #[error("series is empty")]
    EmptySeries,

    #[error("segment [{lo}, {hi}] is not inside 1..={n}")]
    SegmentOutOfRange { lo: usize, hi: usize, n: usize },

    #[error("segment of length {len} is shorter than the minimum {min}")]
    WindowTooShort { len: usize, min: usize },

    #[error("series of length {n} is too short (needs at least {min})")]
    SeriesTooShort { n: usize, min: usize },

    #[error("optimizer did not converge after {} start(s); best log-likelihood {:.6}", .best.restarts_used + 1, .best.loglik)]
    NotConverged { best: Box<FitResult> },

    #[error("fit on segment [{lo}, {hi}] failed: {reason}")]
    FitFailed { lo: usize, hi: usize, reason: String },

    #[error("{skipped} of {total} split points failed to fit")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("test did not reject; no breakpoint to locate")]
    NotRejected,

    #[error("no critical value cached for d = {d}, alpha = {alpha}, gamma = {gamma}")]
    MissingQuantile { d: usize, alpha: f64, gamma: f64 },

    #[error("series is constant; correlations are undefined")]
    ConstantSeries,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
