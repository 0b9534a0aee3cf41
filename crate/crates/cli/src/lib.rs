//! Experiment driver: config loading, subcommands, run manifests.

pub mod commands;
pub mod config;
pub mod manifest;

use bbm_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad command line (clap's own code).
    pub const USAGE: i32 = 2;
    /// Config or parameter rejected before or during a run.
    pub const VALIDATION: i32 = 3;
    /// A numerical scheme or fit failed.
    pub const NUMERICAL: i32 = 4;
    /// The particle cap was hit.
    pub const CAPACITY: i32 = 5;
    /// Reading or writing files failed.
    pub const IO: i32 = 6;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::InfeasibleSchedule { .. } | Error::State(_) | Error::Data(_) => {
            exit::VALIDATION
        }
        Error::Numerical(_) | Error::Accuracy(_) => exit::NUMERICAL,
        Error::Capacity { .. } => exit::CAPACITY,
        Error::Io { .. } | Error::Csv(_) | Error::Format(_) => exit::IO,
    }
}
