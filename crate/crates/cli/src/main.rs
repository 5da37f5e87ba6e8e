use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = pie_cli::Cli::parse();
    match pie_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
