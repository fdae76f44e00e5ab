//! Configuration and subcommand implementations behind the `massl` binary.

pub mod config;
pub mod experiment;
