//! File formats, run configurations, reports and the `smartsize` command
//! line on top of `smartsize-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;

pub use error::{CliError, Result};
