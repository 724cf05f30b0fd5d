//! File formats, checkpoints, reports and the `dcl` command-line driver
//! around [`dcl_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::{CliError, ExitCode};
