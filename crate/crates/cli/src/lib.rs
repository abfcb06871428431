//! Command-line front end for the `rholoss` engine.
//!
//! Each subcommand is a plain function over a validated
//! [`config::ExperimentConfig`] and an output [`artifacts::Layout`], so the
//! binary in `main.rs` is only argument parsing and error reporting.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod ladder;
pub mod prepare;
pub mod report;
pub mod run;
pub mod train_il;

pub use artifacts::{Layout, Overwrite};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
