//! Command implementations of the `willmore` experiment driver.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{ExperimentConfig, Kind, Method};
pub use error::{CliError, Result};
