//! Batch front end for the pulse-based SoH toolkit: file formats and the
//! implementations behind the `soh` binary's subcommands.

pub mod commands;
pub mod error;
pub mod formats;

pub use error::CliError;
