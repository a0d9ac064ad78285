mod args;
mod output;
mod sim;
mod test_cmd;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};

/// Exit status contract: 0 success, 1 internal/numerical failure, 2 user or spec error.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<jive_infer::Error>() {
        Some(e) if e.is_user_error() => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = match err.downcast_ref::<jive_infer::Error>() {
        Some(e) => e.kind(),
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "internal",
    };
    json!({ "error": kind, "message": format!("{err:#}") })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(a) => test_cmd::run(&a),
        Command::Simulate(a) => sim::simulate(&a),
        Command::Power(a) => sim::power(&a),
        Command::Validate(a) => sim::validate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
