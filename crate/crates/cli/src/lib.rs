//! Config parsing and subcommand logic for the `fedcascade` binary.

pub mod commands;
pub mod config;
