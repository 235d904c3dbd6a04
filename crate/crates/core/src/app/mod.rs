//! Configuration, output writers and the subcommands of the `fascicle` tool.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use commands::{execute, exit_code, Command, CommandOptions, Outcome};
pub use config::RunConfig;
