use thiserror::Error;

/// Errors produced by the solver and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbbError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("domain too small: need [{need_lo}, {need_hi}] but grid covers [{have_lo}, {have_hi}]")]
    DomainTooSmall {
        need_lo: f64,
        need_hi: f64,
        have_lo: f64,
        have_hi: f64,
    },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("map is not strictly increasing at node(s) {indices:?}")]
    NonMonotoneMap { indices: Vec<usize> },

    /// The stretching map `y + (1/beta) d/dy log h` lost strict monotonicity,
    /// i.e. the dual constraint `v_xx < beta` fails on the current iterate.
    #[error("beta-convexity violated: stretching map not strictly increasing at node(s) {indices:?}")]
    MonotonicityViolation { indices: Vec<usize> },

    #[error("potential is not discretely convex at node {index}")]
    NonConvex { index: usize },

    #[error("volatility is non-positive at node {index} (sigma = {sigma})")]
    NonPositiveSigma { index: usize, sigma: f64 },

    #[error("value {value} out of range: {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("time {0} is not stored in the potential")]
    TimeNotStored(f64),

    #[error("insufficient stored times: {0}")]
    InsufficientTimes(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("marginals are not in convex order: {0}")]
    ConvexOrderViolation(String),

    #[error("{count} of {total} paths escaped the simulation domain")]
    PathEscape { count: usize, total: usize },

    #[error("ensemble scheme mismatch: expected {expected}, got {got}")]
    SchemeMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SbbError>;

impl From<std::io::Error> for SbbError {
    fn from(e: std::io::Error) -> Self {
        SbbError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SbbError {
    fn from(e: serde_json::Error) -> Self {
        SbbError::Parse(e.to_string())
    }
}

impl From<csv::Error> for SbbError {
    fn from(e: csv::Error) -> Self {
        SbbError::Parse(e.to_string())
    }
}
