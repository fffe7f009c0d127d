//! Batch front-end for the re-transmit-or-preempt solver: configuration
//! parsing, the `solve`/`verify`/`simulate`/`oracle`/`sweep`/`compare`
//! commands, CSV output and the exit-code contract.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run_command, CliError, Command, Outcome, RunOptions};
pub use config::{parse_config, ConfigBuilder, ConfigError, PolicyChoice, RunConfig};
