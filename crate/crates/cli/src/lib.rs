//! Command-line front end: planning, simulation, rescheduling and sweeps
//! over JSON inputs, writing JSON and CSV artifacts.
//!
//! Every output file is a pure function of the inputs and the seed. Timing
//! goes to stderr only.

mod commands;
mod inputs;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetplan::orchestrator::AttainmentMode;

pub use commands::{PlanDiff, PlanFile, Provenance, RunManifest};
pub use inputs::parse_sweep;

/// Exit code for bad input: unreadable files, validation failures.
pub const EXIT_INPUT: i32 = 2;
/// Exit code when no feasible plan exists.
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hetplan", version, about = "Phase-split LLM deployment planner for heterogeneous GPU clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a deployment plan.
    Plan(PlanArgs),
    /// Simulate a plan on a trace.
    Simulate(SimulateArgs),
    /// Adapt a plan to a workload shift or lost GPUs.
    Reschedule(RescheduleArgs),
    /// Plan once per SLO scale.
    Sweep(SweepArgs),
    /// Write a synthetic JSON-lines trace.
    GenTrace(GenTraceArgs),
    /// Check a cluster file (and optionally a plan file).
    Validate(ValidateArgs),
    /// Write the built-in clusters, models and profiles as JSON.
    Fixtures(FixturesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Analytic,
    Simulated,
}

impl From<Mode> for AttainmentMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Analytic => AttainmentMode::Analytic,
            Mode::Simulated => AttainmentMode::Simulated,
        }
    }
}

/// What to plan for. Cluster, model and profile accept a file path or a
/// built-in fixture name.
#[derive(Clone, Debug, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub cluster: String,
    #[arg(long)]
    pub model: String,
    /// Workload profile; ignored when --trace is given.
    #[arg(long, required_unless_present = "trace")]
    pub profile: Option<String>,
    /// JSON-lines trace to profile the workload from.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Overrides the profile's arrival rate (requests/s).
    #[arg(long)]
    pub rate: Option<f64>,
    /// SLO file; without it the references come from one A100.
    #[arg(long)]
    pub slo: Option<PathBuf>,
    #[arg(long)]
    pub slo_scale: Option<f64>,
    #[arg(long, value_parser = ["16", "8", "4", "2"])]
    pub kv_bits: Option<String>,
    /// JSON with optional `tabu`, `search`, `cost`, `kv_bits`, `slo_scale`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub tabu_mem: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// plan.json written by `plan` or `reschedule`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Defaults to the planning trace recorded in the plan's provenance.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub slo: Option<PathBuf>,
    #[arg(long)]
    pub slo_scale: Option<f64>,
    /// Routing seed; defaults to the provenance seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scales for attainment_curve.csv, as `start:end:step`.
    #[arg(long, default_value = "0.5:10:0.5")]
    pub slo_scale_sweep: String,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RescheduleArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// `{"type": "workload_shift", "profile": ..}` or
    /// `{"type": "gpus_offline", "gpu_ids": [..]}`.
    #[arg(long)]
    pub event: PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Also run a fresh full search on the post-event problem and record
    /// its evaluation count.
    #[arg(long)]
    pub compare_full: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value = "1:5:1")]
    pub slo_scale_sweep: String,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub profile: String,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub requests: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub cluster: String,
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
}

/// A failure with its exit code. `Violations` carries a JSON document
/// printed on stdout.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Violations(serde_json::Value),
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Violations(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Violations(_) => write!(f, "validation failed"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
        }
    }
}

impl From<hetplan::Error> for CliError {
    fn from(e: hetplan::Error) -> Self {
        use hetplan::Error as E;
        match e {
            E::EmptyWindow { .. }
            | E::InvalidPlan(_)
            | E::InvalidInput(_)
            | E::Io(_)
            | E::Json(_)
            | E::Csv(_) => CliError::Input(e.to_string()),
            E::NoPath
            | E::InfeasibleConfig(_)
            | E::NoFeasibleConfig(_)
            | E::TooManyStages(_)
            | E::InfeasiblePartition
            | E::InfeasibleRouting(_)
            | E::InsufficientMemory { .. }
            | E::NoSurvivingPhasePair => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Plan(a) => commands::plan(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Reschedule(a) => commands::reschedule(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::GenTrace(a) => commands::gen_trace(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Fixtures(a) => commands::fixtures(&a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            if let CliError::Violations(v) = &e {
                println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
            }
            eprintln!("hetplan: {e}");
            e.exit_code()
        }
    }
}

/// Sizes the global rayon pool from `HETPLAN_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HETPLAN_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Input(format!("HETPLAN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}
