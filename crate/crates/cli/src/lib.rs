//! Library side of the `trimabs` command: config parsing, the subcommands
//! and argument handling, so all of it can be tested in-process.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{Outcome, Overrides};
pub use config::Config;
pub use error::CliError;
