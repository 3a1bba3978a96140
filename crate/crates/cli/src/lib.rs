//! Batch front end: configuration parsing and the run modes behind the
//! `cavity-leak` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{run, RunError};
