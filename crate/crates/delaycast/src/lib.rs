//! File formats, plotting and the command line for `delaycast-core`.

pub mod archive;
pub mod bundle;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod grids;
pub mod manifest;
pub mod plots;
pub mod reports;

pub use error::{CliError, Result};
