//! `balancekit` command-line front end.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use balancekit::{Error, ErrorCategory};
use clap::Parser;

use crate::args::{Cli, Command};

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Input => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::Incompatible => 4,
        ErrorCategory::Simulation => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BALANCEKIT_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a, &cli),
        Command::Fit(a) => commands::fit(a, &cli),
        Command::Balance(a) => commands::balance(a, &cli),
        Command::Trim(a) => commands::trim(a, &cli),
        Command::Estimate(a) => commands::estimate(a, &cli),
        Command::Simulate(a) => commands::simulate(a, &cli),
        Command::Ternary(a) => commands::ternary(a, &cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
