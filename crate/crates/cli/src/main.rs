mod args;
mod commands;
mod host;

use std::panic;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Measure(a) => commands::measure(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Synth(a) => commands::synth(a),
        Command::Check(a) => commands::check(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version go to stdout and are not failures.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
        Err(_) => ExitCode::from(2),
    }
}
