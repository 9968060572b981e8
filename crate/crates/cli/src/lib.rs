//! Configuration, dispatch and persistence for the `kamlab` command.

pub mod cache;
pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Command, Outcome, RunManifest};
pub use config::{load_config, parse_config, LoadedConfig, RunConfig};
