use thiserror::Error;

/// Errors surfaced by measure construction, solvers, sampling, and experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A measure violated a construction invariant (mass, sign, ordering).
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// Parameters outside the admissible ranges (rejected before any work).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The stability margin fell below 1 + varpi; the law may have split
    /// support or a non-square-root edge, so edge-based operations refuse.
    #[error("stability margin {margin:.6} below {threshold:.6}; split support suspected")]
    SplitSupport { margin: f64, threshold: f64 },

    /// Fixed-point iteration did not reach the residual tolerance.
    #[error("solver failed to converge at z = {re}+{im}i (last residual {residual:.3e})")]
    SolverFailure { re: f64, im: f64, residual: f64 },

    /// Homotopy continuation lost track of the physical quartic branch.
    #[error("branch tracking failed at z = {re}+{im}i")]
    BranchFailure { re: f64, im: f64 },

    /// A denominator approached zero in a vector-equation evaluation.
    #[error("singular denominator at index {index} (|den| = {magnitude:.3e})")]
    Singularity { index: usize, magnitude: f64 },

    /// Two algebraically equivalent computation paths disagreed.
    #[error("numerical integrity check failed: paths disagree by {delta:.3e}")]
    NumericalIntegrity { delta: f64 },

    /// Dense eigensolver rejected the problem size or failed to converge.
    #[error("eigensolver error: {0}")]
    Eigen(String),

    /// Request would materialize more memory than the desk-scale guard allows.
    #[error("memory guard: {0}")]
    MemoryGuard(String),

    /// Filesystem or serialization problem while persisting results.
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error reflects a bad configuration (CLI exit code 2)
    /// rather than a runtime failure (exit code 1).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidMeasure(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
