//! Command-line front end for the `amil` binary.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use amil_core::experiments::{AnsatzKind, ExperimentConfig, StudyMode};
use amil_core::synthdata::FamilyKind;
use amil_core::Error;

pub use commands::run;

/// Exit status for invalid flags, config files or overrides.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures while running (divergence, I/O, corrupt files).
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "amil",
    version,
    about = "Bag-level inference studies on synthetic families"
)]
pub struct Cli {
    /// Worker threads for the experiment queue. Outputs do not depend on it.
    #[arg(long, global = true, env = "AMIL_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Run directory name under --out (defaults to the subcommand name).
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample events (and optionally bag indices) to disk.
    Generate(GenerateArgs),
    /// Train one model or an ensemble from a config.
    Train(TrainArgs),
    /// LLR profile and parabola fit for one event file.
    Scan(ScanArgs),
    /// Calibrate a scorer on pseudo-experiments.
    Calibrate(CalibrateArgs),
    /// Apply a calibration to fresh pseudo-experiments.
    Coverage(CoverageArgs),
    /// Run the full study selected by the config mode.
    Scaling(ScalingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    GaussShift,
    GaussLogVar,
}

impl From<FamilyArg> for FamilyKind {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::GaussShift => FamilyKind::GaussShift,
            FamilyArg::GaussLogVar => FamilyKind::GaussLogVar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Binary,
    MultiClass,
    Pnn,
}

impl From<ModeArg> for StudyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Binary => StudyMode::Binary,
            ModeArg::MultiClass => StudyMode::MultiClass,
            ModeArg::Pnn => StudyMode::Pnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnsatzArg {
    None,
    Sqrt,
}

impl From<AnsatzArg> for AnsatzKind {
    fn from(a: AnsatzArg) -> Self {
        match a {
            AnsatzArg::None => AnsatzKind::None,
            AnsatzArg::Sqrt => AnsatzKind::Sqrt,
        }
    }
}

fn finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not a finite number"))
    }
}

fn key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected section.key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "gauss-shift")]
    pub family: FamilyArg,
    /// Informative coordinates per event.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Extra standard-Normal coordinates per event.
    #[arg(long, default_value_t = 0)]
    pub nuisance: usize,
    /// Parameter value the events are drawn at.
    #[arg(long, value_parser = finite)]
    pub theta: f64,
    /// Number of events.
    #[arg(long)]
    pub n: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a bag index file with this many signal events per bag.
    #[arg(long)]
    pub nb: Option<usize>,
    /// Background fraction mixed into each bag (needs --nb).
    #[arg(long, value_parser = finite, default_value_t = 0.0)]
    pub c_bkgrd: f64,
    /// Also write the events as CSV.
    #[arg(long)]
    pub csv: bool,
}

/// Config file plus one-to-one overrides.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set experiment.n_pseudo=500`.
    #[arg(long = "set", value_parser = key_value)]
    pub set: Vec<(String, String)>,
    /// Overrides experiment.master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides experiment.mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

impl ConfigArgs {
    pub fn resolve(&self, default_mode: StudyMode) -> amil_core::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::new(default_mode, 0),
        };
        let mut sets = self.set.clone();
        if let Some(s) = self.seed {
            sets.push(("experiment.master_seed".into(), s.to_string()));
        }
        if let Some(m) = self.mode {
            let name = match m {
                ModeArg::Binary => "binary",
                ModeArg::MultiClass => "multi-class",
                ModeArg::Pnn => "pnn",
            };
            sets.push(("experiment.mode".into(), format!("\"{name}\"")));
        }
        base.with_overrides(&sets)
    }
}

/// Which LLR scorer to use.
#[derive(Debug, Clone, Args, Default)]
pub struct ScorerArgs {
    /// Use the exact likelihood; no checkpoint needed.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Add seeded per-bag noise of this variance to the oracle LLR.
    #[arg(long, requires = "oracle", value_parser = finite)]
    pub oracle_noise: Option<f64>,
    /// Checkpoint(s); several form an ensemble.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Bag size (defaults to the first configured size).
    #[arg(long)]
    pub nb: Option<usize>,
    /// Background fraction for binary training (defaults to the first configured).
    #[arg(long, value_parser = finite)]
    pub c_bkgrd: Option<f64>,
    /// Number of models, each with a derived seed.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Event file written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Signal events per bag.
    #[arg(long)]
    pub nb: usize,
    /// Fit half-width (overrides inference.window).
    #[arg(long, value_parser = finite)]
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Bag size (defaults to the first configured size).
    #[arg(long)]
    pub nb: Option<usize>,
    /// Overrides experiment.n_pseudo.
    #[arg(long)]
    pub n_pseudo: Option<usize>,
    /// Seed of the calibration batch (derived from the master seed by default).
    #[arg(long)]
    pub calibration_seed: Option<u64>,
    /// Fit half-width (overrides inference.window).
    #[arg(long, value_parser = finite)]
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// calibration.json written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Seed of the held-out batch; must differ from the calibration seed.
    #[arg(long)]
    pub holdout_seed: Option<u64>,
    /// Overrides experiment.n_pseudo_holdout.
    #[arg(long)]
    pub n_pseudo: Option<usize>,
    /// Fit half-width (overrides inference.window).
    #[arg(long, value_parser = finite)]
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Error-variance model fitted across bag sizes (overrides experiment.ansatz).
    #[arg(long, value_enum)]
    pub ansatz: Option<AnsatzArg>,
}

/// A failure with its process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::InvalidSpec(_)
            | Error::InvalidGrid(_)
            | Error::HeadMismatch { .. }
            | Error::HeterogeneousEnsemble(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}
