//! Crate-wide error type.
//!
//! Estimation failures that the methodology treats as *legal outcomes*
//! (e.g. an IPW estimate diverging because a treated row has π̂ = 0) are NOT
//! errors — they surface as non-finite `f64` values and are carried through
//! reporting. Errors are reserved for contract violations: malformed inputs,
//! degenerate configurations, and I/O.

use thiserror::Error;

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A treatment identifier that is not part of the treatment space.
    #[error("unknown treatment level `{level}`")]
    UnknownLevel { level: String },

    /// A treatment-space label that never occurs in the training data, so
    /// its propensity cannot be estimated.
    #[error("treatment level `{level}` is absent from the training data; its propensity cannot be estimated")]
    LabelAbsent { level: String },

    /// Too few rows to perform the requested operation.
    #[error("{what} needs at least {needed} rows, got {got}")]
    TooFewRows {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An input that must be finite contains NaN or ±∞.
    #[error("non-finite value in {what} at row {row}")]
    NonFiniteInput { what: &'static str, row: usize },

    /// A parameter outside its documented range (λ < 0, w ∉ [0,1], …).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The r-th residual moment is numerically zero, so the leading RCL
    /// coefficient b̄_r = 1/m_r is undefined.
    #[error("degenerate residual moment m[{order}] = {value:e} (|m[r]| < 1e-12); the leading coefficient 1/m[r] is undefined")]
    DegenerateMoment { order: usize, value: f64 },

    /// The coefficient linear system could not be eliminated.
    #[error("singular coefficient system: pivot {pivot:e} at elimination step {step} is below 1e-12")]
    SingularSystem { step: usize, pivot: f64 },

    /// RCL estimation requires at least one factual observation at the level.
    #[error("no treated units at level `{level}`; the factual residual set is empty")]
    NoTreatedUnits { level: String },

    /// An ATE matrix was requested but an expected level estimate is missing.
    #[error("missing estimate for treatment level `{level}`")]
    MissingLevel { level: String },

    /// Reduction ratios need specific estimator rows that were not supplied.
    #[error("reduction ratios need rows for: {}", missing.join(", "))]
    MissingRows { missing: Vec<String> },

    /// The relative-error denominator Σ|θ^{i,j}| is zero.
    #[error("all true pairwise effects are zero; relative ATE error is undefined")]
    ZeroTruthDenominator,

    /// A finite-difference perturbation pushed a propensity out of (0, 1).
    #[error("perturbed propensity {value} leaves (0,1) at step size {step}; use a smaller step")]
    StepTooLarge { step: f64, value: f64 },

    /// The data-generating process cannot produce a usable sample.
    #[error("degenerate data-generating process: {0}")]
    DegenerateDgp(String),

    /// CSV ingestion failure, pointing at the offending line.
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    /// Experiment configuration problems (missing keys, bad combinations).
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
