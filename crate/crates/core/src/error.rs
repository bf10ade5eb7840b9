use crate::lattice::Site;

/// Errors produced by the numeric modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Invalid(String),

    /// A hard size limit was hit. `what` names the limiting parameter.
    #[error("capacity exceeded: {what} = {requested} exceeds limit {limit}")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("path leaves the potential domain at {0}")]
    OutOfDomain(Site),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested evaluation point is outside the region where the root
    /// equation is solvable.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
