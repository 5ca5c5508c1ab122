mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use log::error;
use supercell::assemble::AssembleError;
use supercell::eval::EvalError;
use supercell::learner::LearnError;
use supercell::mapping::MappingError;
use supercell::perturb::PerturbError;
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::Assemble(AssembleError::InvalidPosition(_)) | EvalError::Learn(LearnError::NonFinite(_)) => {
                CliError::Internal(msg)
            }
            EvalError::Learn(LearnError::InvalidConfig(_)) | EvalError::Perturb(PerturbError::InvalidPlan(_)) => {
                CliError::Usage(msg)
            }
            _ => CliError::Data(msg),
        }
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        EvalError::from(e).into()
    }
}

#[derive(Parser)]
#[command(name = "supercell", version, about = "Learned data integration over super cells")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized stage; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Split every source into super cells (supercells.jsonl).
    Decompose,
    /// Label super cells from the mapping spec (train.jsonl, oracle.csv).
    GenTrain,
    /// Add perturbed copies of the labeled samples (augmented.jsonl).
    Augment,
    /// Fit the classifier (model.bin, loss_curve.csv).
    Train,
    /// Predict positions and assemble the target table (integrated.csv).
    Integrate,
    /// Column matching and join with MinHash signatures.
    Baseline,
    /// Full evaluation suite on the built-in fixtures.
    Eval,
    /// Accuracy per test variant with and without augmentation.
    Ablate,
    /// Compare analytic and numerical gradients on tiny models.
    Gradcheck,
    /// Write the built-in fixtures and example configs.
    Fixtures,
}

impl Command {
    fn needs_config(self) -> bool {
        !matches!(self, Command::Eval | Command::Gradcheck | Command::Fixtures)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if cli.command.needs_config() => {
            return Err(CliError::Usage(format!(
                "--config is required\n\n{}",
                Cli::command().render_usage()
            )))
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.reseed(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set \"out\" in the config".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    match cli.command {
        Command::Decompose => stages::decompose(&cfg, &out),
        Command::GenTrain => stages::gen_train(&cfg, &out),
        Command::Augment => stages::augment_stage(&cfg, &out),
        Command::Train => stages::train_stage(&cfg, &out),
        Command::Integrate => stages::integrate(&cfg, &out),
        Command::Baseline => stages::baseline(&cfg, &out),
        Command::Eval => stages::eval(&cfg, &out),
        Command::Ablate => stages::ablate(&cfg, &out),
        Command::Gradcheck => stages::gradcheck(&cfg, &out),
        Command::Fixtures => stages::fixtures(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.code())
        }
    }
}
