//! Experiment runner behind the `dash` binary.

pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod output;

pub use error::{CliError, CliResult};
