//! Configuration and subcommands behind the `splat-align` binary.

pub mod commands;
pub mod config;

pub use commands::*;
pub use config::{ProviderKind, RunConfig, CONFIG_VERSION};

use crate::error::Error;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_REGISTRATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Json(_) => EXIT_VALIDATION,
        Error::RegistrationFailed { .. } => EXIT_REGISTRATION,
        Error::Io { .. } | Error::NotFound(_) | Error::Image(_) | Error::Format(_) => EXIT_IO,
        _ => EXIT_OTHER,
    }
}
