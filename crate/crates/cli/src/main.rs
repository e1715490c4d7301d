mod commands;
mod config;
mod error;
mod lineage;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{ModeName, PipelineConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "drsc", version, about = "Distributionally robust stability-constrained scheduling")]
struct Cli {
    /// JSON configuration file; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel parts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Stability mode for `schedule` and `evaluate`.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeName>,
    /// Confidence level of the robust constraint.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate commitments and wind levels, label them with the gSCR.
    GenData,
    /// Fit the smooth boundary-aware surrogate to the dataset.
    Fit,
    /// Analytic mean and covariance of the surrogate coefficients.
    Propagate,
    /// Compare the analytic moments with retraining Monte Carlo.
    ValidateMc,
    /// Solve the unit commitment in the chosen stability mode.
    Schedule,
    /// Score a schedule against the true gSCR.
    Evaluate,
    /// MAPE of the analytic moments across coefficients of variation.
    CvSweep,
    /// Deterministic scheduling with inflated limits versus the robust cost.
    MarginBaseline,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(e) = cli.eta {
        cfg.eta = e;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context { cfg };
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Propagate => commands::propagate(&ctx),
        Command::ValidateMc => commands::validate_mc(&ctx),
        Command::Schedule => commands::schedule(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::CvSweep => commands::cv_sweep_cmd(&ctx),
        Command::MarginBaseline => commands::margin_baseline(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
