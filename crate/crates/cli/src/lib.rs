//! `ntk` command line tool: Gram construction, kernel regression, dynamics,
//! spectra, finite-width diagnostics and scaling benchmarks over CSV data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::Settings;

#[derive(Debug, Parser)]
#[command(name = "ntk", version, about = "Neural tangent kernels: exact Grams, regression, dynamics and diagnostics")]
pub struct Cli {
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build a Gram matrix and write it as NTKG with a timing report.
    Gram,
    /// Solve kernel ridge regression and write an NTKS model.
    Fit,
    /// Predict with a fitted model.
    Predict,
    /// Integrate function-space training dynamics.
    Dynamics,
    /// Circle spectrum of a dot-product kernel with a power-law fit.
    Spectrum,
    /// Train finite networks and track kernel velocity.
    Empirical,
    /// Label-aware kernel from the higher-order hierarchy.
    Correct,
    /// Fourier-feature embedding of a dataset.
    Embed,
    /// Scaling sweep over dataset size or pixel count.
    Bench,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ntk_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration and input problems, 3 for numeric failures,
    /// 4 when a memory budget is exceeded.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ntk_core::Error::Budget { .. }) => 4,
            CliError::Core(e) if e.is_numeric() || matches!(e, ntk_core::Error::Domain(_)) => 3,
            _ => 2,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => Settings::from_json_file(p)?,
        None => Settings::default(),
    };
    let s = cli.settings.over(file);
    s.validate()?;
    std::fs::create_dir_all(s.out())?;
    match cli.command {
        Command::Gram => commands::gram(&s),
        Command::Fit => commands::fit(&s),
        Command::Predict => commands::predict(&s),
        Command::Dynamics => commands::dynamics(&s),
        Command::Spectrum => commands::spectrum(&s),
        Command::Empirical => commands::empirical(&s),
        Command::Correct => commands::correct(&s),
        Command::Embed => commands::embed(&s),
        Command::Bench => commands::bench(&s),
    }
}
