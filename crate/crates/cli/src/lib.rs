//! Command-line layer: argument definitions, config files, frame I/O and the
//! subcommand implementations behind the `mvfi` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;

pub use args::Cli;
pub use commands::{run, threads_from_env};
