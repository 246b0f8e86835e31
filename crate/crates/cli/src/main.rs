use std::process::ExitCode;

use clap::Parser;
use mono3d_cli::{run, Cli, Failures};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", Failures::from_error(&err).to_json());
            ExitCode::FAILURE
        }
    }
}
