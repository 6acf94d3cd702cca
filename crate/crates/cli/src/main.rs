use std::process::ExitCode;

use clap::Parser;
use gstd_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match gstd_cli::run(&cli) {
        Ok((outcome, format)) => {
            println!("{}", outcome.render(format));
            if outcome.hard_failure {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
