use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gradient vanishes at {0:?} (|grad e| = {1:e})")]
    CriticalPoint([f64; 3], f64),

    #[error("level {level} is within {distance:e} of a critical value of e")]
    DegenerateLevel { level: f64, distance: f64 },

    #[error("resolution {0} is below the minimum of {1}")]
    ResolutionTooLow(usize, usize),

    #[error("level {0} lies outside the non-convex window (2, 4): the zero-curvature curve is empty")]
    ConvexLevel(f64),

    #[error("zero-curvature tracing failed: {0}")]
    TracingFailure(String),

    #[error("closed-form tangential candidate {0:?} fails the residual check ({1:e})")]
    ResidualFailure([f64; 3], f64),

    #[error("certificate violation: {0}")]
    CertificateViolation(String),

    #[error("phase under-resolved at |xi| = {xi}: needs {needed} refined triangles, budget {budget}")]
    PhaseUnderresolved { xi: f64, needed: usize, budget: usize },

    #[error("Monte-Carlo budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("grid under-resolved: relative change {rel_change:.3e} under resolution doubling (N = {n})")]
    UnderResolved { n: usize, rel_change: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cache version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt cache file: {0}")]
    CorruptFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
