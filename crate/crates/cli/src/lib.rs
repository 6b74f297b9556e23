//! Library surface of the command-line pipeline, exposed so integration
//! tests can drive subcommands in-process.

pub mod commands;
pub mod config;
