//! File-based front end of the mixed-effects spectral VAR pipeline.
//!
//! Every command reads a dataset manifest or an earlier command's output
//! bundle and writes plain files: CSV for tables and series, pretty JSON for
//! structured results, DOT for graphs and optional SVG heatmaps. Outputs are
//! a pure function of the inputs; worker count only changes speed.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod render;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, Result};

/// Parses `argv`. Help and version requests print and give `None`.
pub fn parse_from<I, T>(argv: I) -> Result<Option<Cli>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => Ok(Some(cli)),
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(None);
            }
            Err(CliError::Usage(e.to_string()))
        }
    }
}

/// Parses and runs, as the binary does minus logging setup.
pub fn run_from<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_from(argv)? {
        Some(cli) => run(&cli),
        None => Ok(()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build a pool of {} threads: {e}", cli.threads)))?;
    pool.install(|| match &cli.command {
        Command::Filter(a) => commands::filter::run(cli, a),
        Command::Lagselect(a) => commands::lagselect::run(cli, a),
        Command::Fit(a) => commands::fit::run(cli, a),
        Command::Graph(a) => commands::graph::run(cli, a),
        Command::Simulate(a) => commands::simulate::run(cli, a),
    })
}
