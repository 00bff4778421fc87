//! `leaklab`: run the toy-video leakage experiments from a JSON config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 acceptance check failed. Errors are reported as one JSON object on
//! standard error.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;
use crate::output::Failure;

/// Worker-count override for the parallel parts of sampling and diagnostics.
const THREADS_ENV: &str = "LEAKLAB_THREADS";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(Failure::config(e.to_string().trim_end())),
    };
    if let Err(f) = configure_threads() {
        return fail(f);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(failure: Failure) -> ExitCode {
    eprintln!("{}", failure.to_json());
    ExitCode::from(failure.code)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))
}
