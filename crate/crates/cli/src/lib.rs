//! Command-line front end: TOML run configurations, presets, the `dprec`
//! subcommands and summary tables over metrics CSVs.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
pub mod summary;

pub use error::{CliError, CliResult};
