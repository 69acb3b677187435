//! Library surface of the command-line pipeline; the `gi` binary is a thin
//! wrapper over these modules.

pub mod commands;
pub mod config;
pub mod report;
