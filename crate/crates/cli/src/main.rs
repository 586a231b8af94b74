mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use early_transfer::Error;

use args::{Cli, Command};

/// Failure classes mapped onto exit codes.
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pair(a) => commands::pair(a),
        Command::Longterm(a) => commands::longterm(a),
        Command::Correlate(a) => commands::correlate(a),
        Command::Align(a) => commands::align(a),
        Command::Geometry(a) => commands::geometry(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
