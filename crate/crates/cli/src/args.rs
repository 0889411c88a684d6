use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scorebreak_core::dataset::Summarizer;
use scorebreak_core::microbench::{DEFAULT_TRIALS, TRIALS_ENV};

#[derive(Debug, Parser)]
#[command(name = "scorebreak", version, about = "Break benchmark scores down into per-factor contributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the microbenchmark suite on this machine and write raw trial rows.
    Measure(MeasureArgs),
    /// Fit target scores on the factor scores and report contributions.
    Fit(FitArgs),
    /// Generate a synthetic fleet with known coefficients.
    Synth(SynthArgs),
    /// Generate, fit and score recovery against the truth; exit 1 on a breach.
    Check(CheckArgs),
    /// Re-render a saved JSON report as CSV, JSON or SVG.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Identifier written into every row.
    #[arg(long)]
    pub system_id: String,
    /// `default`, or `shift=N` to run every configuration 2^N times fewer.
    #[arg(long, default_value = "default")]
    pub plan: String,
    #[arg(long, env = TRIALS_ENV, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SvgArgs {
    #[arg(long, default_value_t = 960.0)]
    pub svg_width: f64,
    #[arg(long, default_value_t = 540.0)]
    pub svg_height: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Raw, summarized or records-JSON input; repeat to merge several files.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Target to fit; repeatable. Defaults to every target all systems share.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    /// Report file, format chosen by extension (.csv, .json, .svg); repeatable.
    #[arg(long = "report")]
    pub reports: Vec<PathBuf>,
    /// Clamp non-positive compound differences to zero and flag them instead
    /// of rejecting the system.
    #[arg(long)]
    pub allow_nonpositive: bool,
    /// Add a constant column (sensitivity checks only).
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, default_value_t = Summarizer::Min)]
    pub summarizer: Summarizer,
    /// Solver gradient tolerance; defaults to 1e-10 times the largest column norm.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[command(flatten)]
    pub svg: SvgArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML or JSON spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write raw microbenchmark-level rows (raw.csv).
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the tolerance in the spec's `[check]` table.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A JSON report written by `fit`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, format by extension; repeatable.
    #[arg(long = "out", required = true)]
    pub outs: Vec<PathBuf>,
    #[command(flatten)]
    pub svg: SvgArgs,
}
