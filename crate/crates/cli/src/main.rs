//! `relevo`: fit insertion models to event logs, predict relation contents,
//! compare refresh policies and run the simulator.

mod commands;
mod error;
mod model;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "relevo", version, about = "Models of relation evolution and replica refresh policies")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Directory for output files.
    #[arg(long, global = true, env = "RELEVO_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Do not echo results to standard output.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an insertion model to an event log and compare the four variants.
    Fit(FitArgs),
    /// Predict cardinality, histograms or the first-alteration probability.
    Predict(PredictArgs),
    /// Generate and cost refresh schedules over a grid of policies.
    PolicyEval(PolicyEvalArgs),
    /// Run the discrete-event simulator.
    Simulate(SimulateArgs),
    /// Test a model's insertion intensity against a log by time rescaling.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Homogeneous,
    Rpc,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training log (`timestamp,count,op` CSV).
    pub log: PathBuf,
    /// Held-out log used for the goodness-of-fit table.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Batching window in seconds for compound variants.
    #[arg(long, default_value_t = 60.0)]
    pub window: f64,
    /// Week segmentation JSON; defaults to the eight-block working week.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Variant written to the model file.
    #[arg(long, value_enum, default_value = "rpc")]
    pub variant: VariantArg,
    /// Treat clustered arrivals as one batch.
    #[arg(long)]
    pub compound: bool,
    /// Name of the fitted relation.
    #[arg(long, default_value = "R")]
    pub relation: String,
    /// Cardinality of the relation at the end of the log.
    #[arg(long, default_value_t = 0.0)]
    pub cardinality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Cardinality,
    Histogram,
    FirstAlteration,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    /// Prediction instant (ISO-8601 UTC), not before the model's `as_of`.
    #[arg(long)]
    pub at: String,
    #[arg(long, value_enum, default_value = "cardinality")]
    pub what: What,
    /// Restrict histogram output to one attribute.
    #[arg(long)]
    pub attribute: Option<String>,
    /// Add simulator mean and standard error over this many replications.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PolicyEvalArgs {
    pub model: PathBuf,
    /// Cost JSON; defaults to the model's `cost` section.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    /// Horizon start (ISO-8601 UTC); defaults to the model's `as_of`.
    #[arg(long)]
    pub from: Option<String>,
    /// Horizon end (ISO-8601 UTC).
    #[arg(long)]
    pub to: String,
    #[arg(long, value_delimiter = ',', default_value = "usp,threshold,fa")]
    pub policies: Vec<String>,
    #[arg(long = "M-grid", value_delimiter = ',', default_value = "0.5,1,2,4")]
    pub m_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub alpha: Vec<f64>,
    /// Replay this log instead of using expected costs.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Segmentation for the per-block refresh counts.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Rate used to calibrate the policies; defaults to the mean insertion
    /// rate over the horizon.
    #[arg(long)]
    pub reference_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's replication count.
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub model: PathBuf,
    pub log: PathBuf,
    /// Batching window in seconds when the model has batched arrivals.
    #[arg(long)]
    pub window: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(&cli.global, a),
        Command::Predict(a) => commands::predict(&cli.global, a),
        Command::PolicyEval(a) => commands::policy_eval(&cli.global, a),
        Command::Simulate(a) => commands::simulate(&cli.global, a),
        Command::Validate(a) => commands::validate(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
