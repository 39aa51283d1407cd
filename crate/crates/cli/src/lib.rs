//! Library side of the `setflow` command: run configuration, checkpoint
//! files and the subcommands. `main.rs` only parses arguments and maps
//! errors to exit codes.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod sets;

pub use args::{Cli, Command};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;

use setflow::Error;

/// 2 usage, 3 data or parse, 4 numeric abort.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } => 4,
        Error::Data(_) | Error::Parse { .. } | Error::Io { .. } | Error::Degenerate(_) => 3,
        Error::Usage(_) | Error::Dimension(_) | Error::Contract(_) => 2,
    }
}

/// Caps the worker pool from `SETFLOW_THREADS` when set.
pub fn init_threads_from_env() -> setflow::Result<()> {
    match std::env::var("SETFLOW_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Usage(format!("SETFLOW_THREADS must be a positive integer, got `{v}`")))?;
            setflow::exec::init_threads(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

/// Runs one parsed command, writing its report to stdout.
pub fn run(cli: Cli) -> setflow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let report = match cli.command {
        Command::GenToy(a) => commands::gen_toy(&a)?.to_string(),
        Command::Train(a) => commands::train(&a)?.to_string(),
        Command::Eval(a) => commands::eval(&a)?.csv(),
        Command::Sample(a) => commands::sample(&a)?.to_string(),
        Command::Interpolate(a) => commands::interpolate(&a)?.to_string(),
        Command::AnalyzePhases(a) => commands::analyze_phases(&a)?.to_string(),
    };
    write!(out, "{report}").map_err(|e| Error::io("<stdout>", e))
}
