//! `msfrail`: simulate, fit, test, predict, classify and diagnose multistate
//! frailty models from the command line.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ClassifyArgs, DiagnoseArgs, FitArgs, GridArgs, LrtArgs, PredictArgs, SimulateArgs};

#[derive(Parser, Debug)]
#[command(name = "msfrail", version, about = "Multistate logit-link frailty models for repayment states")]
struct Cli {
    /// TOML file with one table per command; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: MSFRAIL_THREADS, then available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a binary frailty panel or a multistate repayment panel.
    Simulate(SimulateArgs),
    /// Fit one transition sub-model by quadrature MLE or EM.
    Fit(FitArgs),
    /// Parametric bootstrap likelihood-ratio test of variance components.
    Lrt(LrtArgs),
    /// Landing probabilities from fitted single-step models.
    Predict(PredictArgs),
    /// Out-of-bootstrap study of D&C and OMCC classifiers.
    Classify(ClassifyArgs),
    /// Deviance residuals and threshold-sensitivity refits.
    Diagnose(DiagnoseArgs),
    /// GHQ against EM over the simulation grid.
    GhqEmGrid(GridArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    NotConverged(String),
    Io(String),
    Schema(String),
    Core(msfrail::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        use msfrail::Error as E;
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            Self::NotConverged(_) => 3,
            Self::Io(_) | Self::Schema(_) => 4,
            Self::Core(e) => match e {
                E::Numeric(_) => 3,
                E::Io(_) | E::Csv(_) | E::Json(_) | E::Schema(_) | E::Parse { .. } | E::Data(_) | E::Dimension(_) => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::NotConverged(m) => write!(f, "not converged: {m}"),
            Self::Io(m) => write!(f, "I/O error: {m}"),
            Self::Schema(m) => write!(f, "schema error: {m}"),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<msfrail::Error> for CliError {
    fn from(e: msfrail::Error) -> Self {
        Self::Core(e)
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("MSFRAIL_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("MSFRAIL_THREADS='{v}' is not a count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&config::resolve(a, file, "simulate")?),
        Command::Fit(a) => commands::fit(&config::resolve(a, file, "fit")?),
        Command::Lrt(a) => commands::lrt(&config::resolve(a, file, "lrt")?),
        Command::Predict(a) => commands::predict(&config::resolve(a, file, "predict")?),
        Command::Classify(a) => commands::classify(&config::resolve(a, file, "classify")?),
        Command::Diagnose(a) => commands::diagnose(&config::resolve(a, file, "diagnose")?),
        Command::GhqEmGrid(a) => commands::ghq_em_grid(&config::resolve(a, file, "ghq-em-grid")?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msfrail: {e}");
            ExitCode::from(e.code())
        }
    }
}
