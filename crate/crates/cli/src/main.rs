//! `degsde`: check models, simulate ensembles, compare laws, run probes and build covers.
//!
//! Exit codes: 0 on success or pass, 2 on a domain-level failure (hypothesis
//! violation, failed comparison, aborted cover), 1 on usage, config and
//! runtime errors.

mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const TOOL: &str = "degsde";

#[derive(Parser, Debug)]
#[command(name = "degsde", version, about = "Simulation and law verification for degenerate SDEs")]
struct Cli {
    /// JSON config merged under the explicit flags; a report from this tool also works.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; without it reports and data go to stdout.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the model hypotheses on a ball and report violations.
    Check(CheckArgs),
    /// Simulate an ensemble and write it as CSV.
    Simulate(SimulateArgs),
    /// Compare two simulated laws through resolvent functionals.
    Compare(CompareArgs),
    /// Analytic probes of the OU model frozen at a point.
    Probe(ProbeArgs),
    /// Build and verify a covering atlas.
    Cover(CoverArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Euler,
    ExpEuler,
    FrozenDyadic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    DetSlope,
    SupLp,
    D2x,
}

/// Builtin name or model JSON path, plus the sizes of `ou-constant`.
#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    /// Builtin name (paper-ex1, kolmogorov-2d, ou-constant) or model JSON file.
    pub model: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d0: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Radius of the probed ball.
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[arg(long)]
    pub n_probes: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct SchemeArgs {
    #[arg(long)]
    pub scheme: Option<SchemeName>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t: Option<f64>,
    /// Dyadic level m of the frozen scheme.
    #[arg(long)]
    pub level: Option<u32>,
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Starting point, comma separated; defaults to the all-ones vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z0: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Stop paths on leaving the ball B(0, radius).
    #[arg(long)]
    pub stop_radius: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scheme_a: Option<SchemeName>,
    #[arg(long)]
    pub scheme_b: Option<SchemeName>,
    #[arg(long)]
    pub h: Option<f64>,
    /// Step of law B; defaults to `h`.
    #[arg(long)]
    pub h_b: Option<f64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[arg(long)]
    pub level: Option<u32>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z0: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Battery members to use, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    pub battery: Option<Vec<String>>,
    /// Seed of law B; defaults to `seed + 1`.
    #[arg(long)]
    pub seed_b: Option<u64>,
    /// Constant added to the drift of law B (an alternative for power checks).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub drift_shift_b: Option<Vec<f64>>,
    #[arg(long)]
    pub z_crit: Option<f64>,
    /// Paths simulated per chunk; bounds memory, not results.
    #[arg(long)]
    pub chunk: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    pub probe: Option<ProbeKind>,
    /// Point at which the noise coefficient is frozen; defaults to the origin.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    /// Times for the det-slope fit, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Battery member probed.
    #[arg(long)]
    pub f: Option<String>,
    /// Probe grid is the cube [-w, w]^d with `grid_n` points per axis.
    #[arg(long)]
    pub grid_half_width: Option<f64>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub fd_step: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct CoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub r: Option<f64>,
    /// Oscillation budget of every chart (Hilbert-Schmidt norm of the Q0 variation).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub oversample: Option<usize>,
    #[arg(long)]
    pub probe_density: Option<usize>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl From<degsde::Error> for CliError {
    fn from(e: degsde::Error) -> Self {
        let code = if matches!(e, degsde::Error::Hypothesis { .. }) { 2 } else { 1 };
        Self { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(format!("i/o: {e}"))
    }
}

/// Whether the command passed; `false` maps to exit code 2.
pub type Outcome = Result<bool, CliError>;

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    let file = config::read_config(cli.config.as_deref())?;
    let ctx = commands::Context { seed: cli.seed, out: cli.out };
    match cli.command {
        Command::Check(a) => commands::check(&ctx, file, a),
        Command::Simulate(a) => commands::simulate_cmd(&ctx, file, a),
        Command::Compare(a) => commands::compare(&ctx, file, a),
        Command::Probe(a) => commands::probe(&ctx, file, a),
        Command::Cover(a) => commands::cover(&ctx, file, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
