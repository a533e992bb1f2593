use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad parameters, mismatched lengths, invalid files.
    #[error("validation error: {0}")]
    Validation(String),

    /// A tree description that is not a tree.
    #[error("structural error: {0}")]
    Structural(String),

    /// A configured size cap would be exceeded.
    #[error("resource cap exceeded: {what} needs {needed}, cap is {cap}")]
    Resource { what: String, needed: u128, cap: u128 },

    /// Restriction to an empty index set.
    #[error("empty restriction: {0}")]
    EmptyRestriction(String),

    /// A pigeonhole stage found no mass to work with at these parameters.
    #[error("stage {stage} failed at t={t}, eps={eps}: {reason}")]
    StageFailure {
        stage: usize,
        t: f64,
        eps: f64,
        reason: String,
    },

    /// Every Frostman sample at some radius was zero.
    #[error("degenerate radius range: {0}")]
    DegenerateRange(String),

    /// A finite-sum identity that must hold did not. Indicates a bug.
    #[error("internal consistency violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
