//! Library behind the `gje` binary: config loading, command dispatch and report output.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] gje_core::Error),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A verdict failed and `--strict` was given.
    pub const VERDICT_FAILED: i32 = 1;
    pub const ERROR: i32 = 2;
}

#[derive(Debug, Parser)]
#[command(name = "gje", version, about = "Numerical checks for generated Jacobian equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Args)]
pub struct CommonArgs {
    /// Problem config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Exit with status 1 when the command's verdict fails.
    #[arg(long)]
    pub strict: bool,
    /// Directory for the JSON report and CSV traces; overrides `output.dir`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Do not print the report on stdout.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Spot-check the structural assumptions of the generating function.
    Validate(CommonArgs),
    /// Scan the A3w and A4w conditions.
    CheckConditions(CommonArgs),
    /// Trace a g-segment and optionally test g-convexity of a region.
    Segment(CommonArgs),
    /// Sampled g*-transform of a grid potential.
    Transform(CommonArgs),
    /// Contact state, E and A at given points.
    Mate(CommonArgs),
    /// Height function along a g-segment with its second-derivative bound.
    Height(CommonArgs),
    /// Generated Jacobian measure of regions against Alexandrov-type bounds.
    Measure(CommonArgs),
    /// Strict g-convexity probe along a segment.
    Probe(CommonArgs),
    /// Differentiability check through the dual side.
    C1(CommonArgs),
    /// Run the built-in fixtures through every check.
    Suite(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Validate(a)
            | Command::CheckConditions(a)
            | Command::Segment(a)
            | Command::Transform(a)
            | Command::Mate(a)
            | Command::Height(a)
            | Command::Measure(a)
            | Command::Probe(a)
            | Command::C1(a)
            | Command::Suite(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::CheckConditions(_) => "check-conditions",
            Command::Segment(_) => "segment",
            Command::Transform(_) => "transform",
            Command::Mate(_) => "mate",
            Command::Height(_) => "height",
            Command::Measure(_) => "measure",
            Command::Probe(_) => "probe",
            Command::C1(_) => "c1",
            Command::Suite(_) => "suite",
        }
    }
}
