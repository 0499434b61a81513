//! Command-line pipeline: `synth`, `preprocess`, `train` and `report`.
//!
//! Exit codes: 0 success, 1 output failure, 2 config, 3 data, 4 numeric
//! failure, 5 artifact mismatch.

pub mod commands;
pub mod config;
mod error;

use std::path::PathBuf;

use aqf::synth::{Dependence, SynthConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_preprocess, cmd_report, cmd_synth, cmd_train};
pub use config::{Overrides, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "aqf", version, about = "Attention-LSTM air-quality forecasting pipeline")]
pub struct Cli {
    /// Log more detail to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic NOAA/EPA fixture and a config that uses it.
    Synth(SynthArgs),
    /// Resample, fill gaps and normalize; write the aligned frame.
    Preprocess(RunArgs),
    /// Train a model and write its checkpoint and loss table.
    Train(RunArgs),
    /// Score the test partition and rank input features.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `data.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(
            &self.config,
            &Overrides {
                seed: self.seed,
                out: self.out.clone(),
                set: self.set.clone(),
            },
        )
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to score; defaults to `checkpoint.json` in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DependenceArg {
    TwoFeature,
    SingleFeature,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for noaa.csv, epa.csv and config.toml.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3650)]
    pub days: usize,
    /// First day, YYYY-MM-DD.
    #[arg(long, default_value = "2010-01-01")]
    pub start: String,
    #[arg(long, default_value_t = 4)]
    pub readings_per_day: usize,
    /// Probability that any one cell is blank.
    #[arg(long, default_value_t = 0.02)]
    pub missing_rate: f64,
    /// Pollutant noise relative to the driving signal.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = DependenceArg::TwoFeature)]
    pub dependence: DependenceArg,
}

impl SynthArgs {
    pub fn config(&self) -> Result<SynthConfig, CliError> {
        let start = self
            .start
            .parse()
            .map_err(|e| CliError::Config(format!("--start `{}`: {e}", self.start)))?;
        Ok(SynthConfig {
            start,
            days: self.days,
            readings_per_day: self.readings_per_day,
            missing_rate: self.missing_rate,
            noise: self.noise,
            dependence: match self.dependence {
                DependenceArg::TwoFeature => Dependence::TwoFeature,
                DependenceArg::SingleFeature => Dependence::SingleFeature,
            },
            seed: self.seed,
            ..SynthConfig::default()
        })
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(&a.config()?, &a.out).map(|_| ()),
        Command::Preprocess(a) => cmd_preprocess(&a.load()?).map(|_| ()),
        Command::Train(a) => cmd_train(&a.load()?).map(|_| ()),
        Command::Report(a) => cmd_report(&a.run.load()?, a.checkpoint.as_deref()).map(|_| ()),
    }
}
