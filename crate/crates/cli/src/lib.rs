//! Two-arm experiment driver: synthetic cohort, split, preprocessing,
//! uniform training, characteristic selection, cognizant retraining,
//! prediction, evaluation, comparison and report.

pub mod commands;
pub mod config;
mod plots;
pub mod workspace;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::run_subcommand;
pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("checksum mismatch for {}: manifest has {expected}, file has {found}", path.display())]
    Checksum { path: PathBuf, expected: String, found: String },
    #[error(transparent)]
    Core(#[from] renalseg::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(renalseg::Error::io(path, e))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) | CliError::Checksum { .. } => 3,
            CliError::Core(_) | CliError::Failed(_) => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arm {
    Uniform,
    Cognizant,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Uniform => "uniform",
            Arm::Cognizant => "cognizant",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "renalseg", about = "Kidney/tumor/cyst segmentation with cognizant sampling")]
pub struct Cli {
    /// Experiment config JSON; defaults to the chosen preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in config used when --config is absent: default or smoke.
    #[arg(long, global = true, default_value = "default")]
    pub preset: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Print the resolved config as JSON.
    ShowConfig,
    /// Generate the synthetic phantom cohort.
    Synth,
    /// Split the cohort into train/val/test.
    Split,
    /// Resample and standardize every case.
    Preprocess,
    /// Train one arm.
    Train {
        #[arg(long, value_enum, default_value = "uniform")]
        sampling: Arm,
    },
    /// Validation inference, LASSO selection and sampling weights.
    SelectFeatures,
    /// Train the cognizant arm with the selected weights.
    Retrain,
    /// Segment the test cases with an arm's best checkpoint.
    Predict {
        #[arg(long, value_enum)]
        arm: Arm,
    },
    /// Hierarchical Dice / Surface Dice of an arm's predictions.
    Evaluate {
        #[arg(long, value_enum)]
        arm: Arm,
    },
    /// Paired statistical comparison of the two arms.
    Compare,
    /// Table and plots.
    Report,
}

/// Parses `args` (without the program name), resolves the config and runs
/// the subcommand.
pub fn run_args(args: Vec<String>) -> Result<(), CliError> {
    let (rest, overrides) = config::extract_overrides(args)?;
    let cli = match Cli::try_parse_from(std::iter::once("renalseg".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    let cfg = base.with_overrides(&overrides)?;
    cfg.validate()?;
    run_subcommand(&cli.command, &cfg)
}
