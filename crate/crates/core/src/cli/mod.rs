//! The `homlab` command-line batch runner.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, OUTPUT_DIR_ENV};

use crate::error::HomError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const GATE: u8 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "homlab", version, about = "Coarse-grained homogenization laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set norms.s=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory (also settable through HOMLAB_OUTPUT_DIR).
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FieldInput {
    /// Read the field from this file instead of generating it from the configuration.
    #[arg(long)]
    pub field: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a coefficient field and write it with its JSON sidecar.
    GenField(Common),
    /// Coarse-grain every partition cube and check the hierarchy inequalities.
    Coarsegrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: FieldInput,
    },
    /// Coarse-grained ellipticity constants and Besov norms of one field.
    Ellipticity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: FieldInput,
    },
    /// Monte Carlo estimate of E[A(□_n)] and the homogenized matrix.
    Ergodic(Common),
    /// Dirichlet homogenization experiment over scales and seeds.
    Homogenize(Common),
    /// Moment, growth and B-norm statistics of the multiplicative cascade.
    CascadeVerify(Common),
    /// Fast built-in checks on constant fields.
    Selftest {
        /// Directory for the report; defaults to the current directory.
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    GateFailed,
}

pub fn exit_code(err: &HomError) -> u8 {
    match err {
        e if e.is_config_error() => exit::CONFIG,
        HomError::Io(_) | HomError::Json(_) | HomError::Csv(_) => exit::CONFIG,
        _ => exit::NUMERICAL,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    ExitCode::from(run_code(args))
}

/// [`run`] returning the numeric exit code.
pub fn run_code<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(Outcome::Passed) => exit::SUCCESS,
        Ok(Outcome::GateFailed) => {
            eprintln!("homlab: acceptance gate failed");
            exit::GATE
        }
        Err(e) => {
            eprintln!("homlab: {e}");
            exit_code(&e)
        }
    }
}
