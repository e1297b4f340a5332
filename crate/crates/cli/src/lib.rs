//! Library half of the command-line tool: run configuration, the prior
//! checkpoint and ensemble formats, and the command implementations. The
//! binary in `main.rs` only parses arguments and maps errors to exit codes.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod ensemble_io;

use dkprior_core::error::Error;

/// Process exit code for an error: 2 usage/config, 3 I/O, 4 numerical.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::InvalidConfig(_)
        | Error::InvalidShape(_)
        | Error::InvalidMask(_)
        | Error::DegenerateBatch(_)
        | Error::DegenerateLabels(_)
        | Error::Format { .. } => 2,
        Error::Io(_) => 3,
        Error::NumericalFailure(_) => 4,
    }
}
