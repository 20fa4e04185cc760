use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The simulation produced a non-finite quantity.
    #[error("non-finite {what} at step {step}")]
    Numeric { step: usize, what: String },

    /// An ensemble member failed.
    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
