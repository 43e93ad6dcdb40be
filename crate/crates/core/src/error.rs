use thiserror::Error;

/// Errors raised by the solvers, oracles and the enumeration oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid block partition: {0}")]
    InvalidPartition(String),

    #[error("invalid approximation: {0}")]
    InvalidApprox(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("objective evaluated to a non-finite value ({0})")]
    NonFinite(f64),

    #[error("stale cache detected for block {block}: deviation {deviation:e}")]
    StaleCache { block: usize, deviation: f64 },

    #[error(
        "1-D minimization along coordinate {coordinate} did not converge in {iterations} \
         iterations (h = {h}, |g'(h)| = {derivative:e}, bracket = [{lower}, {upper}])"
    )]
    InnerMinFailed {
        coordinate: usize,
        iterations: usize,
        h: f64,
        derivative: f64,
        lower: f64,
        upper: f64,
    },

    #[error("restricted Newton solve did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    RestrictedSolveFailed { iterations: usize, grad_norm: f64 },

    #[error(
        "descent invariant violated at iteration {iteration} (block {block:?}): \
         F {before} -> {after}, required decrease {required:e}"
    )]
    DescentViolation {
        iteration: usize,
        block: Option<usize>,
        before: f64,
        after: f64,
        required: f64,
    },

    #[error("enumeration refused: n = {n} exceeds the limit of {limit}")]
    EnumerationLimit { n: usize, limit: usize },

    #[error("linear-rate fit needs at least {needed} fixed-support iterations, got {got}")]
    ShortTail { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
