//! Error types shared across the crate.

/// Convenience alias used by most fallible operations in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Top-level error for modeling, optimization, and configuration failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input vector or matrix had the wrong dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A scalar or structural parameter violated its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A categorical operation was requested on an embedding that has no
    /// per-coordinate category table.
    #[error("categorical decode table required but not configured")]
    MissingDecodeTable,

    /// A matrix that must be symmetric positive definite was not.
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    /// Cholesky factorization failed at every jitter level tried.
    #[error("factorization failed after jitter attempts {attempted:?}")]
    FactorizationFailed { attempted: Vec<f64> },

    /// Both inner optimizers failed to produce a feasible candidate.
    #[error("inner optimizers failed; direct: {direct}; cma-es: {cmaes}")]
    InnerOptFailed { direct: String, cmaes: String },

    /// Experiment or run configuration was malformed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem or process I/O failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// An objective evaluation failed.
    #[error("objective evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Failure modes of a single objective evaluation.
///
/// External-command objectives can fail in ways the optimization loop wants
/// to distinguish (and score rather than abort on); in-process objectives
/// mostly report contract violations.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    /// The external command could not be started.
    #[error("failed to spawn objective command: {0}")]
    Spawn(String),

    /// The external command exceeded its wall-clock allowance.
    #[error("objective command timed out after {timeout_secs}s")]
    Timeout { timeout_secs: f64 },

    /// The external command exited unsuccessfully.
    #[error("objective command exited with status {status}")]
    NonZeroExit { status: i32 },

    /// No line of the command's stdout parsed as a finite number.
    #[error("no parseable objective value in command output")]
    Unparseable,

    /// A sparse evaluation request omitted a coordinate the objective reads.
    #[error("point is missing required coordinate {0}")]
    MissingCoordinate(usize),

    /// A continuous objective was given codes, or vice versa.
    #[error("objective evaluated with the wrong input space")]
    WrongSpace,

    /// A category index fell outside its dimension's declared count.
    #[error("category {got} out of range for dimension {dim} (count {count})")]
    OutOfRange { dim: usize, got: u32, count: u32 },
}
