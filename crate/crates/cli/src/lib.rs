//! Library side of the `morpher` command: configuration and subcommands.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_gen, cmd_gradcheck, cmd_train, cmd_zeroshot};
pub use config::RunConfig;
