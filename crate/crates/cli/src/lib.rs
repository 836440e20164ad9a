//! Command-line driver for CCMA beamformer design: run configuration,
//! subcommands and artifact export.

// `!(x > 0.0)` is deliberate throughout: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::{run, Cli};
pub use error::{CliError, CliResult};
