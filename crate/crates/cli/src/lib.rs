//! Command-line surface of the MMEL attribution toolkit.

pub mod args;
pub mod command;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod netpbm;
pub mod run;

use std::ffi::OsString;

use clap::Parser;

pub use command::{resolve, Command};
pub use error::{CliError, ImageError};

/// Parses, resolves and runs one invocation. Returns the process exit status:
/// 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match resolve(&cli.verb).and_then(|cmd| run::run(&cmd)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mmel: {e}");
            e.exit_code()
        }
    }
}
