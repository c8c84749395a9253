use std::process::ExitCode;

use clap::Parser;
use recmetric::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if outcome.written.is_none() {
                print!("{}", outcome.output);
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
