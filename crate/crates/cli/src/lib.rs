//! Command-line front end for the `satpose` library: configuration,
//! dataset/mesh/landmark ingest, artifact export and the subcommands.
//!
//! Exit codes: 0 on success, 1 on a validation error, 2 on an I/O error.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod mesh;

use std::ffi::OsString;

use clap::Parser;

pub use error::CliError;

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
