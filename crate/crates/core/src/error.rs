use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that only makes sense for a finite exponent received `inf`.
    #[error("{0} requires a finite exponent")]
    InfiniteExponent(&'static str),

    #[error("moment of order {order} is infinite")]
    InfiniteMoment { order: String },

    #[error("need at least {needed} atoms, got {got}")]
    TooFewAtoms { needed: usize, got: usize },

    #[error("constraint set is infeasible: {0}")]
    Infeasible(String),

    #[error("entropy is unbounded: {0}")]
    Unbounded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("conditional chain failed to reach the event after {attempts} sweeps; try a wider interval")]
    ChainInitialization { attempts: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
