//! `minor-overlaps`: theory curves, Monte Carlo experiments and probes for
//! eigenvector overlaps between a noisy matrix and its principal minor.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid arguments or a formula
//! evaluated outside its domain, 3 CI coverage below the threshold
//! (`compare`), 4 numerical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use minor_overlaps::Error;

use crate::output::Format;

#[derive(Parser, Debug)]
#[command(name = "minor-overlaps", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate limiting formulas on a grid.
    Theory(TheoryArgs),
    /// Run a bulk overlap experiment and write the report.
    Simulate(ExperimentArgs),
    /// Bulk experiment plus coverage check (exit 3 below the threshold).
    Compare(CompareArgs),
    /// Rank-one spike experiments and trajectories.
    Spike(SpikeArgs),
    /// Bernoulli matrix experiments.
    Bernoulli(BernoulliArgs),
    /// Empirical checks of the increment correlations and the overlap drift.
    Probe(ProbeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Record the wall time in JSON output, which makes files differ between runs.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kernel {
    Goe,
    General,
}

#[derive(Args, Debug)]
#[command(group(
    ArgGroup::new("quantity")
        .required(true)
        .args(["kernel", "spike_f", "spike_g", "lambda_star", "interlace", "bernoulli"])
))]
pub struct TheoryArgs {
    #[command(flatten)]
    pub common: Common,
    /// Overlap kernel W(mu, lambda, t) along lambda.
    #[arg(long, value_enum)]
    pub kernel: Option<Kernel>,
    /// Spike-spike overlap f(t).
    #[arg(long)]
    pub spike_f: bool,
    /// Spike-bulk overlap g(mu, t) along mu.
    #[arg(long)]
    pub spike_g: bool,
    /// Maximizer of W * rho for a given mu.
    #[arg(long)]
    pub lambda_star: bool,
    /// Interlacing bounds for quantile x.
    #[arg(long)]
    pub interlace: bool,
    /// Bernoulli top-overlap expansion.
    #[arg(long)]
    pub bernoulli: bool,
    #[arg(long = "qfrac", visible_alias = "q")]
    pub q: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    /// Quantile of the minor eigenvalue (tail mass above it).
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Grid size for curves.
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Number of points for f(t) or lambda* curves instead of a single value.
    #[arg(long)]
    pub points: Option<usize>,
    /// Matrix size (Bernoulli expansion; representative size for --kernel general).
    #[arg(long = "N")]
    pub big_n: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// SpectrumModel JSON describing A (for --kernel general).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Bulk experiment (the only kind these subcommands run).
    #[arg(long)]
    pub bulk: bool,
    #[arg(long = "N", default_value_t = 400)]
    pub big_n: usize,
    #[arg(long = "qfrac", visible_alias = "q", default_value_t = 0.5)]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 0.5)]
    pub x: f64,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 25)]
    pub bins: usize,
    /// Lambda binning range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    /// SpectrumModel JSON describing A (default: A = 0).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Minimum fraction of interior bins whose CI must contain the theory.
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpikeMode {
    /// Top minor eigenvector against the full spike.
    Spike,
    /// Minor bulk eigenvectors against the full spike.
    Bulk,
    /// Outlier and bulk-edge trajectories along one noise path.
    Path,
}

#[derive(Args, Debug)]
pub struct SpikeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = SpikeMode::Spike)]
    pub mode: SpikeMode,
    #[arg(long)]
    pub lambda: f64,
    /// Minor spike (spike and path modes); without it the spike avoids the minor.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long = "qfrac", visible_alias = "q")]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long = "N", default_value_t = 300)]
    pub big_n: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 25)]
    pub bins: usize,
    /// Final time of the path.
    #[arg(long, default_value_t = 1.2)]
    pub t_max: f64,
    /// Path grid points.
    #[arg(long, default_value_t = 120)]
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BernoulliMode {
    Bulk,
    Spike,
}

#[derive(Args, Debug)]
pub struct BernoulliArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = BernoulliMode::Bulk)]
    pub mode: BernoulliMode,
    #[arg(long)]
    pub p: f64,
    #[arg(long = "qfrac", visible_alias = "q", default_value_t = 0.5)]
    pub q: f64,
    #[arg(long = "N", default_value_t = 300)]
    pub big_n: usize,
    /// Matrix sizes for spike mode.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 200, 400])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 25)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    Correlation,
    Drift,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: ProbeKind,
    #[arg(long = "N", default_value_t = 50)]
    pub big_n: usize,
    /// Minor size (default round(0.9 N)).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Increments (correlation) or trials (drift).
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Also estimate the drift with the step doubled.
    #[arg(long)]
    pub doubling: bool,
    /// Index quadruple i,l,j,k for the correlation probe (repeatable).
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub index: Vec<usize>,
    /// Pair i,j for the drift probe.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub pair: Option<Vec<usize>>,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io(std::io::Error),
    /// Coverage below threshold; outputs were written.
    Coverage { coverage: Option<f64>, threshold: f64 },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Core(Error::InvalidArgument(_) | Error::Domain(_)) => 2,
            CliError::Coverage { .. } => 3,
            CliError::Core(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Coverage { coverage, threshold } => match coverage {
                Some(c) => write!(f, "coverage {c} is below the threshold {threshold}"),
                None => write!(f, "no interior bins to measure coverage"),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Theory(a) => commands::theory(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Spike(a) => commands::spike(&a),
        Command::Bernoulli(a) => commands::bernoulli(&a),
        Command::Probe(a) => commands::probe(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
