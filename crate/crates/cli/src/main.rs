//! `walsnb`: fit, simulate, cross-validate and score NB2 count models.
//!
//! Every command reads a TOML config; flags override the file. Output files
//! start with comment lines carrying the tool version and the resolved
//! config, so any result can be regenerated from its own header.
//!
//! Exit status: 0 success, 1 usage or config error, 2 estimation failure,
//! 3 I/O or input-data error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "walsnb", version, about = "WALS model averaging for negative binomial regression")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit ML and WALS to a CSV data set and print the coefficients.
    Fit(FitArgs),
    /// Run a Monte-Carlo experiment.
    Simulate(SimulateArgs),
    /// K-fold cross-validated learning curves.
    Cv(CvArgs),
    /// Score predictive NB2 distributions against observed counts.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// CSV file; overrides `data` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Prior family with its default constants: laplace or weibull.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in experiment instead of a config file ("desk").
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub record_timing: bool,
    /// Per-run results (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-scenario means and quartiles.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Training sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Per-fold metrics in long format (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fold means per training size and procedure.
    #[arg(long)]
    pub means: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV with columns mu, rho and y.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Truncation point R for the Brier and spherical norms (default: the
    /// largest observed count).
    #[arg(short = 'R', long)]
    pub truncation: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
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
    let run = || match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Cv(a) => commands::cv(a),
        Command::Score(a) => commands::score(a),
    };
    let outcome = match cli.threads {
        None => run(),
        Some(0) => Err(commands::CliError::usage("--threads must be at least 1")),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(commands::CliError::usage(format!("thread pool: {e}"))),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("walsnb: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
