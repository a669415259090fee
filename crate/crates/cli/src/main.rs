//! Batch command-line interface: simulate, fit, predict, infer, cv, study.

mod commands;
mod io;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "coxkl", version, about = "Joint models for random time grids and functional responses")]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON object whose keys supply default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset with known truth.
    Simulate(SimulateArgs),
    /// Fit the model by penalized maximum likelihood.
    Fit(FitArgs),
    /// Predict scores and trajectories from a fit.
    Predict(PredictArgs),
    /// Asymptotic and bootstrap standard deviations.
    Infer(InferArgs),
    /// Choose smoothing parameters by cross-validation.
    Cv(CvArgs),
    /// Run the Monte Carlo study and write summary tables.
    Study(StudyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Design {
    /// Sine components on [0, 1] with two scores per process.
    Paper,
    /// Seven-day auction-like data with two intensity and three price
    /// components.
    Auction,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "paper")]
    pub design: Design,
    /// Baseline rate (paper design).
    #[arg(long, default_value_t = 10.0)]
    pub r: f64,
    /// Share of variance on the first component (paper design).
    #[arg(long, default_value_t = 0.75)]
    pub alpha: f64,
    /// Number of subjects.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replicate index; different indices give independent datasets.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with columns subject_id,x,y.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV with a subject_id column listing every subject, including
    /// those without observations.
    #[arg(long)]
    pub subjects: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Time domain as lo,hi (normalized to [0, 1] internally).
    #[arg(long, default_value = "0,1")]
    pub domain: String,
    #[arg(long, default_value_t = 2)]
    pub p1: usize,
    #[arg(long, default_value_t = 2)]
    pub p2: usize,
    /// Number of equally spaced interior knots.
    #[arg(long, default_value_t = 5)]
    pub knots: usize,
    /// Gauss-Legendre nodes per knot span for the intensity integral.
    #[arg(long, default_value_t = 5)]
    pub quad_order: usize,
    /// Smoothing parameters for the mean log-intensity, intensity
    /// components, mean response and response components.
    #[arg(long, default_value = "1e-4,1e-4,1e-4,1e-4")]
    pub xi: String,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Relative objective change at which the optimizer stops.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of random perturbations of the starting value.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Points in the curve grid.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fit file written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of bootstrap replicates (0 disables the bootstrap).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 7)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1)]
    pub sweeps: usize,
    /// Score table output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Comma-separated scenarios such as alpha075-r30.
    #[arg(long, default_value = "alpha075-r30")]
    pub scenarios: String,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "50,100,200")]
    pub n: String,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interior knots (comma-separated for several bases).
    #[arg(long, default_value = "5")]
    pub knots: String,
    /// Fixed smoothing parameters; when absent they are chosen by
    /// cross-validation on a pilot replicate of each scenario.
    #[arg(long)]
    pub xi: Option<String>,
    /// Also compute asymptotic standard deviations for every replicate.
    #[arg(long)]
    pub asymptotic: bool,
    /// The full sweep: both variance splits, both rates, four sample
    /// sizes, five and ten knots, 300 replicates.
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Inserts the flags from `--config` right after the subcommand so that
/// flags given on the command line take precedence.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Some(obj) = value.as_object() else { bail!("{}: expected a JSON object", path.display()) };
    let mut extra = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            serde_json::Value::Bool(true) => extra.push(OsString::from(flag)),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                extra.push(flag.into());
                extra.push(joined.join(",").into());
            }
            other => {
                extra.push(flag.into());
                extra.push(scalar(other)?.into());
            }
        }
    }
    let names = ["simulate", "fit", "predict", "infer", "cv", "study"];
    let pos = args
        .iter()
        .position(|a| names.contains(&a.to_string_lossy().as_ref()))
        .map_or(args.len(), |p| p + 1);
    let mut out = args[..pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[pos..]);
    Ok(out)
}

fn scalar(v: &serde_json::Value) -> Result<String> {
    Ok(match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.to_string(),
        serde_json::Value::Bool(b) => b.to_string(),
        other => bail!("unsupported configuration value {other}"),
    })
}

fn run() -> Result<()> {
    let args = expand_config(std::env::args_os().collect())?;
    let cli = Cli::parse_from(args);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().context("starting the thread pool")?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Infer(a) => commands::infer(a),
        Command::Cv(a) => commands::cv(a),
        Command::Study(a) => commands::study(a),
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
