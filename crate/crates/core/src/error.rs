use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A query falls outside a precomputed table.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Adaptive refinement could not reach the requested tolerance.
    #[error("accuracy not reached: achieved {achieved:.3e}, requested {requested:.3e} ({context})")]
    Accuracy {
        achieved: f64,
        requested: f64,
        context: String,
    },

    /// Invalid configuration detected before any work is done.
    #[error("configuration error: {0}")]
    Config(String),

    /// A geometric or statistical precondition does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// No feasible parameter exists below the configured cap.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
