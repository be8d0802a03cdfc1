mod args;
mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::Parser;
use streamap::Error;

use args::Cli;

/// 0 ok, 1 undefined headline metric, 2 bad input, 3 numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    match commands::run(&cli.command).and_then(|o| o.emit().map(|()| o.undefined)) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: the headline metric is undefined (no ground truth was scored)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
