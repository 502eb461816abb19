//! Command-line harness: `verify`, `bench`, `cost` and `volume`.
//!
//! Reports are CSV (header row, comma separated, no quoting) or JSON arrays
//! of objects with the same keys. Identical configurations produce
//! byte-identical reports.

pub mod commands;
pub mod config;
mod error;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use config::{Cli, Command, ExperimentConfig, Format};
pub use error::CliError;
pub use report::{Cell, Report};

/// A rendered report and whether every check in it passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub passed: bool,
}

pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (report, passed) = match command {
        Command::Verify => commands::verify(cfg)?,
        Command::Bench => (commands::bench(cfg)?, true),
        Command::Cost => (commands::cost(cfg)?, true),
        Command::Volume => (commands::volume(cfg)?, true),
    };
    Ok(Outcome { report, passed })
}

/// Parses `args` (including the program name), runs the command and writes
/// the report. Returns the process exit status: 0 on success, 1 when a
/// check fails, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_cli(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_cli(cli: &Cli) -> Result<bool, CliError> {
    let cfg = ExperimentConfig::resolve(&cli.flags)?;
    let outcome = execute(cli.command, &cfg)?;
    let text = outcome.report.render(cfg.format);
    match &cfg.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(outcome.passed)
}
