//! Command-line front end for `rnnctl`.
//!
//! Exit codes: 0 on success, 1 on domain errors (a JSON object with an
//! `error` field goes to stderr), 2 on usage errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
pub mod error;
pub mod output;
pub mod svg;

pub use error::{CliError, ErrorReport};
pub use svg::{emit_phase_svg, Overlay, PlotError};

#[derive(Debug, Parser)]
#[command(name = "rnnctl", version, about = "Controllability analysis and steering for recurrent nets")]
pub struct Cli {
    /// Seed for every random sampler.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output files, comma separated; the extension (.json, .csv, .svg)
    /// selects the artifact. Without it the primary report goes to stdout.
    #[arg(long, value_delimiter = ',')]
    pub out: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Activation function reports.
    Activation {
        #[command(subcommand)]
        action: ActivationAction,
    },
    /// Row condition on B.
    CheckB(CheckBArgs),
    /// Controllability verdict with sampled certificate checks.
    Verdict(VerdictArgs),
    /// Integrate under a piecewise-constant schedule.
    Simulate(SimulateArgs),
    /// Planar steering in canonical form.
    Steer2d(Steer2dArgs),
    /// Smoothing convergence and fixed-point cover.
    MollifyDemo(MollifyArgs),
    /// Grid reachability.
    Reach(ReachArgs),
}

#[derive(Debug, Subcommand)]
pub enum ActivationAction {
    Check(ActivationCheckArgs),
}

#[derive(Debug, Args)]
pub struct ActivationCheckArgs {
    /// Built-in activation (`tanh`, `softsign`).
    #[arg(long, required_unless_present = "system", conflicts_with = "system")]
    pub name: Option<String>,
    /// Take the activation from a system file instead.
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CheckBArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Max-norm tolerance for zero and equal rows.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct VerdictArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Samples per certificate.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Samples are drawn from `[-w, w]^{n+m}`.
    #[arg(long, default_value_t = 10.0)]
    pub half_width: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Schedule file `{"segments": [{"u": [..], "t": ..}, ..]}`.
    #[arg(long)]
    pub control: PathBuf,
    /// Initial state, comma separated (default: origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// Horizon (default: schedule length).
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    /// `ẋ = σ(ax + by)`, `ẏ = σ(u)`; start in these coordinates.
    F1,
    /// `ẋ̃ = a σ(x̃) + b v`, `ẏ̃ = v`.
    F1t,
    /// `ẋ = σ(ax + u)`, `ẏ = σ(by + u)`.
    F2,
}

#[derive(Debug, Args)]
pub struct Steer2dArgs {
    #[arg(long, value_enum)]
    pub form: FormArg,
    #[arg(long, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub start: Vec<f64>,
    #[arg(long = "T", default_value_t = 5.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Longest constant-input approach before ray feedback (Form 1).
    #[arg(long, default_value_t = 10.0)]
    pub max_hold: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct MollifyArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub control: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// Increasing smoothing parameters.
    #[arg(long = "l", value_delimiter = ',', default_value = "10,20,40,80")]
    pub l: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Circle radii for the fixed-point cover (planar systems only).
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1")]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    pub targets: usize,
    /// Integration step inside the cover iteration.
    #[arg(long, default_value_t = 1e-2)]
    pub cover_step: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Center,
    Representative,
}

#[derive(Debug, Args)]
pub struct ReachArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// `xmin,xmax,ymin,ymax`.
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,1,-1,1")]
    pub bounds: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub cell: f64,
    /// Scalar values for m = 1, or `;`-separated vectors.
    #[arg(long, allow_hyphen_values = true, default_value = "-3,-1,0,1,3")]
    pub controls: String,
    #[arg(long, default_value_t = 0.25)]
    pub tstep: f64,
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Center)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_expansions: usize,
    /// `nx,ny,offset`: keep `nx x + ny y > offset` along every path.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "confine")]
    pub stay_in: Vec<f64>,
    /// Keep paths on the side of `pᵀAx = 0` that contains x0, where `p`
    /// is the first certificate of a non-controllable system.
    #[arg(long)]
    pub confine: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
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
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("plain strings"));
            1
        }
    }
}
