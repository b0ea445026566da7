//! Experiment harness around `semcom-core`: binary file formats, INI
//! configuration, parallel sweeps, CSV/SVG reports and the `semcom`
//! command line.

pub mod cli;
pub mod config;
pub mod formats;
pub mod harness;
pub mod report;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error(transparent)]
    Core(#[from] semcom_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    /// 1 for usage errors, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }
}
