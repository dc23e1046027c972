//! Command-line pipeline and REST service around `mcpm-core`.
//!
//! Subcommands `fit`, `probe`, `rank`, `cluster`, `export` and `serve` share
//! one [`config::RunConfig`]; each writes its resolved form next to its
//! outputs so a run can be repeated exactly.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod fieldfile;
pub mod server;

pub use config::{Query, RunConfig};
pub use error::{CliError, Result};
