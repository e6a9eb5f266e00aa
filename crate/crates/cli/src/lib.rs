//! Batch driver for the ADAT experiments: configuration, run directories
//! and the six commands.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command};
pub use config::{EvalSplit, Precision, RunConfig, SplitSpec};
pub use error::{CliError, ExitCode};
