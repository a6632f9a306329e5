use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ensemble::Averaging;
use super::scaling::AnsatzKind;
use crate::bagnet::{HeadKind, ModelConfig, TrainSchedule};
use crate::error::{Error, Result};
use crate::inference::theta_grid;
use crate::synthdata::{EventFamily, FamilyKind};

/// Which study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMode {
    Binary,
    MultiClass,
    Pnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub mode: StudyMode,
    pub master_seed: u64,
    #[serde(default = "d::bag_sizes")]
    pub bag_sizes: Vec<usize>,
    /// Background fractions (binary mode).
    #[serde(default = "d::background_fracs")]
    pub background_fracs: Vec<f64>,
    /// Defaults to 5 in binary mode and 20 otherwise.
    #[serde(default)]
    pub n_models_per_point: Option<usize>,
    /// Pseudo-experiments used for calibration.
    #[serde(default = "d::n_pseudo")]
    pub n_pseudo: usize,
    /// Held-out pseudo-experiments for coverage; defaults to `n_pseudo`.
    #[serde(default)]
    pub n_pseudo_holdout: Option<usize>,
    #[serde(default = "d::chunk_events")]
    pub chunk_events: usize,
    /// Training-plus-validation events per class (per θ for multi-class and
    /// parameterized studies).
    #[serde(default = "d::events_per_class")]
    pub events_per_class: usize,
    /// Independent test events per class (binary mode); defaults to
    /// `test_frac · events_per_class`.
    #[serde(default)]
    pub test_events_per_class: Option<usize>,
    /// Reference hypothesis.
    #[serde(default)]
    pub theta0: f64,
    /// Alternative hypothesis (binary mode).
    #[serde(default = "d::theta_alt")]
    pub theta_alt: f64,
    /// θ at which pseudo-experiments are generated.
    #[serde(default)]
    pub theta_true: f64,
    #[serde(default)]
    pub averaging: Averaging,
    /// Also run every pseudo-experiment through the exact likelihood.
    #[serde(default = "d::yes")]
    pub oracle_pass: bool,
    /// Probability-vs-θ curves to emit per bag size (parameterized mode).
    #[serde(default = "d::curves")]
    pub curves_per_point: usize,
    /// Error-variance model fitted across bag sizes.
    #[serde(default)]
    pub ansatz: AnsatzKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "d::family")]
    pub family: FamilyKind,
    #[serde(default = "d::one")]
    pub dim: usize,
    #[serde(default)]
    pub nuisance_dims: usize,
    #[serde(default = "d::frac")]
    pub val_frac: f64,
    #[serde(default = "d::frac")]
    pub test_frac: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            family: d::family(),
            dim: 1,
            nuisance_dims: 0,
            val_frac: d::frac(),
            test_frac: d::frac(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default = "d::width")]
    pub width: usize,
    #[serde(default = "d::depth")]
    pub depth: usize,
    #[serde(default = "d::dropout")]
    pub dropout: f64,
    #[serde(default = "d::l2")]
    pub l2: f64,
    #[serde(default = "d::bn_momentum")]
    pub bn_momentum: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            width: d::width(),
            depth: d::depth(),
            dropout: d::dropout(),
            l2: d::l2(),
            bn_momentum: d::bn_momentum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    #[serde(default = "d::grid_lo")]
    pub grid_lo: f64,
    #[serde(default = "d::grid_hi")]
    pub grid_hi: f64,
    #[serde(default = "d::grid_step")]
    pub grid_step: f64,
    /// Fit half-width; by default ±0.4, or ±0.7 for single-event bags.
    #[serde(default)]
    pub window: Option<f64>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            grid_lo: d::grid_lo(),
            grid_hi: d::grid_hi(),
            grid_step: d::grid_step(),
            window: None,
        }
    }
}

/// A complete study description; sections map to TOML tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub synthdata: SynthSection,
    #[serde(default)]
    pub bagnet: NetSection,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub inference: InferenceSection,
}

mod d {
    use crate::synthdata::FamilyKind;
    pub fn bag_sizes() -> Vec<usize> {
        vec![1, 10, 50, 250]
    }
    pub fn background_fracs() -> Vec<f64> {
        vec![0.0]
    }
    pub fn n_pseudo() -> usize {
        200
    }
    pub fn chunk_events() -> usize {
        1000
    }
    pub fn events_per_class() -> usize {
        100_000
    }
    pub fn theta_alt() -> f64 {
        0.1
    }
    pub fn yes() -> bool {
        true
    }
    pub fn curves() -> usize {
        5
    }
    pub fn family() -> FamilyKind {
        FamilyKind::GaussShift
    }
    pub fn one() -> usize {
        1
    }
    pub fn frac() -> f64 {
        0.2
    }
    pub fn width() -> usize {
        crate::bagnet::ModelConfig::new(1, crate::bagnet::HeadKind::BinarySigmoid).width
    }
    pub fn depth() -> usize {
        3
    }
    pub fn dropout() -> f64 {
        0.1
    }
    pub fn l2() -> f64 {
        1e-3
    }
    pub fn bn_momentum() -> f64 {
        0.99
    }
    pub fn grid_lo() -> f64 {
        -1.0
    }
    pub fn grid_hi() -> f64 {
        1.0
    }
    pub fn grid_step() -> f64 {
        0.1
    }
}

impl ExperimentConfig {
    /// Defaults for a study of the given kind.
    pub fn new(mode: StudyMode, master_seed: u64) -> Self {
        Self {
            experiment: ExperimentSection {
                mode,
                master_seed,
                bag_sizes: d::bag_sizes(),
                background_fracs: d::background_fracs(),
                n_models_per_point: None,
                n_pseudo: d::n_pseudo(),
                n_pseudo_holdout: None,
                chunk_events: d::chunk_events(),
                events_per_class: d::events_per_class(),
                test_events_per_class: None,
                theta0: 0.0,
                theta_alt: d::theta_alt(),
                theta_true: 0.0,
                averaging: Averaging::Probability,
                oracle_pass: true,
                curves_per_point: d::curves(),
                ansatz: AnsatzKind::Sqrt,
            },
            synthdata: SynthSection::default(),
            bagnet: NetSection::default(),
            schedule: TrainSchedule::default(),
            inference: InferenceSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply `section.key=value` overrides; values are parsed as TOML
    /// (bare words fall back to strings).
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(&self.to_toml_string()?).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            let (section, field) = key.split_once('.').ok_or_else(|| {
                Error::Config(format!("override key {key:?} must look like section.key"))
            })?;
            let value = parse_value(raw);
            let table = doc
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{section} is not a section")))?;
            table.insert(field.to_string(), value);
        }
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |m: String| Err(Error::Config(m));
        if e.bag_sizes.is_empty() || e.bag_sizes.contains(&0) {
            return bad("bag_sizes must be non-empty and positive".into());
        }
        if e.background_fracs.is_empty()
            || e.background_fracs
                .iter()
                .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return bad("background_fracs must be non-empty and ≥ 0".into());
        }
        if e.n_pseudo < 2 || e.n_pseudo_holdout.is_some_and(|n| n < 2) {
            return bad("n_pseudo must be at least 2".into());
        }
        if e.n_models_per_point == Some(0) {
            return bad("n_models_per_point must be positive".into());
        }
        if let Some(&too_big) = e.bag_sizes.iter().find(|&&n| n > e.chunk_events) {
            return bad(format!(
                "bag size {too_big} exceeds chunk_events {}",
                e.chunk_events
            ));
        }
        if self.synthdata.dim == 0 {
            return bad("synthdata.dim must be positive".into());
        }
        if ![e.theta0, e.theta_alt, e.theta_true]
            .iter()
            .all(|t| t.is_finite())
        {
            return bad("θ values must be finite".into());
        }
        self.schedule
            .validate()
            .map_err(|err| Error::Config(err.to_string()))?;
        self.grid()?;
        Ok(())
    }

    pub fn family(&self) -> EventFamily {
        EventFamily::with_dims(
            self.synthdata.family,
            self.synthdata.dim,
            self.synthdata.nuisance_dims,
        )
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        let i = &self.inference;
        theta_grid(i.grid_lo, i.grid_hi, i.grid_step).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn n_models(&self) -> usize {
        self.experiment
            .n_models_per_point
            .unwrap_or(match self.experiment.mode {
                StudyMode::Binary => 5,
                _ => 20,
            })
    }

    pub fn n_pseudo_holdout(&self) -> usize {
        self.experiment
            .n_pseudo_holdout
            .unwrap_or(self.experiment.n_pseudo)
    }

    pub fn window(&self, n_b: usize) -> f64 {
        self.inference
            .window
            .unwrap_or_else(|| crate::inference::default_window(n_b))
    }

    pub fn model_config(&self, head: HeadKind) -> ModelConfig {
        let n = &self.bagnet;
        ModelConfig {
            width: n.width,
            depth: n.depth,
            dropout: n.dropout,
            l2: n.l2,
            bn_momentum: n.bn_momentum,
            ..ModelConfig::new(self.family().dim_total(), head)
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
