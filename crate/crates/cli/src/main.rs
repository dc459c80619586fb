//! `layertime` — fit per-layer latency models from profiles and use them to
//! steer network structure.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use layertime_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "layertime", version, about = "Per-layer latency models and latency-aware structure steering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random profiling networks and write their layers as a plan file.
    Plan(PlanArgs),
    /// Time every layer of a plan with a synthetic oracle and write a profile file.
    Synth(SynthArgs),
    /// Write the built-in oracle definition to a file.
    Oracle(OracleArgs),
    /// Fit one time model per layer kind from a profile file.
    Fit(FitArgs),
    /// Predict the execution time of one layer configuration.
    Predict(PredictArgs),
    /// Report coefficient significance and safe-expansion regions.
    Analyze(AnalyzeArgs),
    /// Round a network's widths up to predicted execution-time local minima.
    Expand(ExpandArgs),
    /// Shrink a network's widths under a time-aware objective, then expand.
    Compress(CompressArgs),
    /// Irreducible per-step time of a network's recurrent layers.
    Floor(FloorArgs),
}

#[derive(Args)]
pub struct PlanArgs {
    /// default, fc, cnn or rnn
    #[arg(long, default_value = "default")]
    pub scope: String,
    #[arg(long, default_value_t = 120)]
    pub networks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Plan file written by `plan`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Oracle definition; the built-in oracle when omitted.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Relative noise of the built-in oracle.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Noise seed of the built-in oracle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Profile file (one JSON record per line).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory receiving one `<kind>.model.json` per layer kind.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the held-out split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each kind's records held out for testing.
    #[arg(long, default_value_t = 0.25)]
    pub holdout: f64,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub mape_stop: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Model file or directory of `*.model.json` files.
    #[arg(long)]
    pub model: PathBuf,
    /// Layer configuration as inline JSON or `@path`.
    #[arg(long)]
    pub config: String,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Profile file for the significance tests.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Convolution geometry for region analysis, e.g. `24x24,3x3,1,same`; repeatable.
    #[arg(long)]
    pub geometry: Vec<String>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a CNN model with snap rules for every usable region.
    #[arg(long)]
    pub simplified: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// Expanded network file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full expansion trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Zero-padding index plan from the input to the expanded network.
    #[arg(long)]
    pub pad_plan: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// Weight of predicted time (ms) against the loss.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Loss command: receives the candidate network file path, prints one
    /// non-negative number. Without it a built-in width-deficit loss is used.
    #[arg(long)]
    pub evaluator_cmd: Option<String>,
    /// Opaque parameters passed to the loss command as its second argument.
    #[arg(long)]
    pub theta: Option<String>,
    /// Weight of the built-in width-deficit loss.
    #[arg(long, default_value_t = 1.0)]
    pub loss_weight: f64,
    /// Maximum number of loss evaluations.
    #[arg(long, default_value_t = 1000)]
    pub budget: usize,
    /// Candidate widths per layer: `ceil(k·w/steps)` for k = 1..=steps.
    #[arg(long, default_value_t = 8)]
    pub grid_steps: u32,
    /// Allow the last layer's output width to change too.
    #[arg(long)]
    pub free_output: bool,
    /// Search the whole grid instead of greedy descent.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FloorArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
}

/// Failure carrying its exit-code class.
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn report(&self) -> (u8, String) {
        match self {
            Failure::Usage(msg) => (1, format!("error[usage]: {msg}")),
            Failure::Core(e) => match e.class() {
                ErrorClass::Usage => (1, format!("error[usage]: {e}")),
                ErrorClass::Data => (2, format!("error[data]: {e}")),
                ErrorClass::Numeric => (3, format!("error[numeric]: {e}")),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Plan(a) => commands::plan(a),
        Command::Synth(a) => commands::synth(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Expand(a) => commands::expand(a),
        Command::Compress(a) => commands::compress(a),
        Command::Floor(a) => commands::floor(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, line) = f.report();
            eprintln!("{}", line.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
