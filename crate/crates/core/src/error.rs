use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible collective: {0}")]
    InfeasibleCollective(String),

    #[error("enumeration too large: {count} exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no action available in the current state")]
    NoActionAvailable,

    #[error("rollout reached a dead end")]
    DeadEnd,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(what: impl Into<String>) -> Result<T> {
    Err(Error::Shape(what.into()))
}
