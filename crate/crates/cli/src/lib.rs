//! Command-line front end for pulse-based QML models.
//!
//! Every subcommand writes its outputs and a `manifest.json` into a run
//! directory. Exit codes: 0 success or pass, 1 error, 2 diagnostic failure.

pub mod args;
pub mod commands;
pub mod run;
pub mod sweep;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use args::ModelArgs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

/// Result of a command that completed without error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Pass => EXIT_OK,
            Self::Fail => EXIT_FAIL,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pulseqml", version, about = "Pulse-based quantum machine learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dynamical Lie algebra, ideal decomposition and output variance.
    Lie(commands::LieArgs),
    /// Necessary-condition expressivity check per monomial degree.
    Express(commands::ExpressArgs),
    /// Fit pulses and output scale to a dataset with Adam.
    Train(commands::TrainArgs),
    /// Scripted experiment sweeps over models and qubit counts.
    Sweep(sweep::SweepArgs),
    /// Model file utilities.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Write a dataset CSV for a target function.
    Dataset(commands::DatasetArgs),
}

#[derive(Subcommand, Debug)]
pub enum ModelCommand {
    /// Write a model (builtin or file, after flags) in the model file format.
    Export(commands::ExportArgs),
}

#[derive(clap::Args, Debug, Clone, serde::Serialize)]
pub struct OutArgs {
    /// Run directory; defaults to `$PULSEQML_OUT/<command>` or `runs/<command>`.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Lie(a) => commands::lie(&a),
        Command::Express(a) => commands::express(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => sweep::sweep(&a),
        Command::Model(ModelCommand::Export(a)) => commands::export(&a),
        Command::Dataset(a) => commands::dataset(&a),
    };
    match result {
        Ok(outcome) => outcome.exit_code(),
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_ERROR
        }
    }
}
