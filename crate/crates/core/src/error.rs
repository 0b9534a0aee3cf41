use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates the operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The object is in a state where the operation is undefined.
    #[error("invalid state: {0}")]
    State(String),

    /// Supplied data does not cover what the operation needs.
    #[error("insufficient data: {0}")]
    Data(String),

    #[error(
        "population capacity exceeded at t={time}: {particles} particles > cap {cap} \
         (pruned so far: {pruned})"
    )]
    Capacity {
        time: f64,
        particles: usize,
        cap: usize,
        pruned: u64,
    },

    #[error("tube schedule infeasible: R_T = {big_r} >= T = {horizon}")]
    InfeasibleSchedule { big_r: f64, horizon: f64 },

    /// Values escaped their admissible range during a numerical scheme.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A fit or quadrature did not reach its accuracy target.
    #[error("accuracy target missed: {0}")]
    Accuracy(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("checkpoint format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
