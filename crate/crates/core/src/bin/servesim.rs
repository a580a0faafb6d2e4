use std::process::ExitCode;

use clap::Parser;
use servesim::cli::{run, RunConfig};

fn main() -> ExitCode {
    let config = RunConfig::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&config, &mut stdout) {
        Ok(summary) if summary.all_finished() => ExitCode::SUCCESS,
        Ok(summary) => {
            eprintln!(
                "servesim: only {} of {} requests finished",
                summary.finished, summary.requests
            );
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("servesim: {e}");
            ExitCode::FAILURE
        }
    }
}
