//! The `mixlaw` command-line tool and its read-only prediction service.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use mixlaw_core::analysis::AnalysisError;
use mixlaw_core::dataio::DataError;
use mixlaw_core::MetricDirection;

mod commands;
pub mod server;

#[derive(Debug, Parser)]
#[command(name = "mixlaw", version, about = "Fit multitask scaling laws and predict trade-off frontiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an experiment-results file and report every invalid record.
    Validate(ValidateArgs),
    /// Generate a synthetic dataset from a ground-truth description.
    Simulate(SimulateArgs),
    /// Fit joint laws and fraction curves and write a law bundle.
    Fit(FitArgs),
    /// Predict the two-task trade-off frontier at a model size.
    Frontier(FrontierArgs),
    /// Tabulate effective fractions, effective parameters and gains.
    Neff(NeffArgs),
    /// Extrapolate a training curve to convergence.
    Correct(CorrectArgs),
    /// Correlate a quality metric with loss across runs.
    Correlate(CorrelateArgs),
    /// Write tables and plot data for a bundle.
    Report(ReportArgs),
    /// Serve a bundle and point predictions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    LossLike,
    QualityLike,
}

impl From<DirectionArg> for MetricDirection {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::LossLike => MetricDirection::LossLike,
            DirectionArg::QualityLike => MetricDirection::QualityLike,
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// csv or json_lines; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth JSON with exactly two tasks.
    #[arg(long)]
    pub truth: PathBuf,
    /// Output records; `.csv` writes CSV, anything else JSON-lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated model sizes.
    #[arg(long, value_parser = parse_sizes, default_value = "2e7,3.5e7,6e7,1e8,2e8,3.5e8,6e8,1e9")]
    pub sizes: SizeList,
    /// Comma-separated weights of the first task.
    #[arg(long, value_parser = parse_weights, default_value = "0,0.05,0.1,0.3,0.5,0.7,0.9,0.95,1")]
    pub grid: WeightList,
    /// Overrides the seed stored in the ground truth.
    #[arg(long, env = "MIXLAW_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated task names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tasks: Vec<String>,
    #[arg(long)]
    pub testset: String,
    #[arg(long)]
    pub metric: String,
    #[arg(long, value_enum, default_value = "loss-like")]
    pub direction: DirectionArg,
    #[arg(long, env = "MIXLAW_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Bootstrap replicates per fit; 0 skips uncertainty estimation.
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Total model size in parameters.
    #[arg(long, value_parser = parse_size)]
    pub n: f64,
    /// Comma-separated weights of the first task, each in (0, 1).
    #[arg(long, value_parser = parse_open_grid)]
    pub grid: Option<WeightList>,
    /// `.json` writes the full curve, anything else CSV. Prints CSV when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// The two tasks, first then second; required when the bundle holds more than two.
    #[arg(long, value_parser = parse_pair)]
    pub tasks: Option<TaskPair>,
}

#[derive(Debug, Args)]
pub struct NeffArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_parser = parse_size)]
    pub n: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    /// CSV with `step` and `value` columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = mixlaw_core::fitting::DEFAULT_TARGET_STEP)]
    pub target_step: u64,
    #[arg(long, value_enum, default_value = "loss-like")]
    pub direction: DirectionArg,
    #[arg(long, env = "MIXLAW_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub testset: String,
    #[arg(long, default_value = "loss")]
    pub loss_metric: String,
    #[arg(long)]
    pub quality_metric: String,
    /// Plot data as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Model sizes for the frontier and capacity tables.
    #[arg(long, value_parser = parse_sizes, default_value = "1e8,1e9,1e10")]
    pub sizes: SizeList,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPair(pub String, pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct SizeList(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct WeightList(pub Vec<f64>);

fn parse_size(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("model size must be positive and finite, got {s}"))
    }
}

fn parse_pair(s: &str) -> Result<TaskPair, String> {
    match s.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [a, b] if !a.is_empty() && !b.is_empty() => Ok(TaskPair(a.to_string(), b.to_string())),
        _ => Err(format!("expected two comma-separated tasks, got `{s}`")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect()
}

fn parse_sizes(s: &str) -> Result<SizeList, String> {
    s.split(',').map(parse_size).collect::<Result<_, _>>().map(SizeList)
}

fn parse_weights(s: &str) -> Result<WeightList, String> {
    let v = parse_list(s)?;
    if let Some(p) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("weight {p} is outside [0, 1]"));
    }
    Ok(WeightList(v))
}

fn parse_open_grid(s: &str) -> Result<WeightList, String> {
    let v = parse_list(s)?;
    if let Some(p) = v.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(format!("grid weight {p} is outside (0, 1)"));
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err("grid must be strictly increasing".into());
    }
    Ok(WeightList(v))
}

/// A failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Fit(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Correction { .. } => CliError::Fit(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        if e.is_fit_failure() {
            CliError::Fit(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
