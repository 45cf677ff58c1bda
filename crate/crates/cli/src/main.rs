//! `vmshield` command-line tool.
//!
//! Exit status: 0 on success, 1 when the operation fails on valid input
//! (inconsistent matrix, invalid scenario, `place --strict` rejection), 2 on
//! usage errors and unreadable or unparseable input. Data goes to stdout,
//! diagnostics to stderr.

mod args;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::GlobalConfig;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match GlobalConfig::resolve(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    env_logger::Builder::new()
        .filter_level(config.level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    match commands::dispatch(cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
