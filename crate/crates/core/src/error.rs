use thiserror::Error;

/// Errors raised by mesh construction, assembly, corrector computation and
/// the time-stepping solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("meshes are not nested: {0}")]
    NotNested(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("coordinate {s} lies outside the parameter domain [0, {length}]")]
    OutOfDomain { s: f64, length: f64 },

    #[error("singular corrector problem on element {element}: {reason}")]
    SingularPatch { element: usize, reason: String },

    #[error("factorization failed ({context}): {reason}")]
    Factorization { context: String, reason: String },

    #[error("linear solve failed at step {step}: {reason}")]
    StepFailed { step: usize, reason: String },

    #[error("missing corrector basis for the PG-LOD variant")]
    MissingCorrectorBasis,

    #[error("{0}")]
    Unavailable(String),

    #[error("eigen solver did not converge: {0}")]
    Eigen(String),

    #[error("estimated memory {estimate_mb} MB exceeds the budget of {budget_mb} MB")]
    MemoryBudget { estimate_mb: u64, budget_mb: u64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
