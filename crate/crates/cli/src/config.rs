//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 1
//! output_dir = "runs/bb"
//! thresholds = ["best_accuracy", "far_1e-3", "default"]
//!
//! [world]
//! d = 64
//! m = 128
//! k_f = 24
//! sigma_id = 0.3
//! eta_model = 0.05
//!
//! [attack]
//! mode = "black_box"        # white_box | black_box | transfer
//! use_correction = true
//! k = 24
//! attribute = "f"
//! n_targets = 500
//! ```
//!
//! Every other key has a default; see the field documentation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use ssal_core::attack::AttackMode;
use ssal_core::calibration::ThresholdCriterion;
use ssal_core::world::WorldConfig;
use ssal_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    WhiteBox,
    BlackBox,
    Transfer,
}

impl FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white_box" => Ok(Self::WhiteBox),
            "black_box" => Ok(Self::BlackBox),
            "transfer" => Ok(Self::Transfer),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected white_box, black_box or transfer)"
            ))),
        }
    }
}

/// Data the black-box attacker fits its confidence curve on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitData {
    /// The `k²` answers of the correction-matrix batch.
    BasisPairs,
    /// Extra random image pairs, queried once before the attack.
    HeldOut,
}

/// A named decision threshold: `best_accuracy`, `far_<alpha>` or `default`
/// (the target's own operating point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Criterion(ThresholdCriterion),
    Default,
}

impl ThresholdSpec {
    pub fn name(&self) -> String {
        match self {
            ThresholdSpec::Default => "default".into(),
            ThresholdSpec::Criterion(ThresholdCriterion::BestAccuracy) => "best_accuracy".into(),
            ThresholdSpec::Criterion(ThresholdCriterion::FarTarget(a)) => format!("far_{a:e}"),
        }
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ThresholdSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(ThresholdSpec::Default),
            "best_accuracy" => Ok(ThresholdSpec::Criterion(ThresholdCriterion::BestAccuracy)),
            _ => {
                let alpha = s
                    .strip_prefix("far_")
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| (0.0..=1.0).contains(a))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "bad threshold '{s}' (expected best_accuracy, default or far_<alpha in [0,1]>)"
                        ))
                    })?;
                Ok(ThresholdSpec::Criterion(ThresholdCriterion::FarTarget(
                    alpha,
                )))
            }
        }
    }
}

impl Serialize for ThresholdSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ThresholdSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn yes() -> bool {
    true
}

fn default_attribute() -> String {
    "f".into()
}

fn default_population() -> usize {
    1000
}

fn default_held_out_pairs() -> usize {
    400
}

fn default_calibration_pairs() -> usize {
    1000
}

pub fn default_thresholds() -> Vec<ThresholdSpec> {
    vec![
        ThresholdSpec::Criterion(ThresholdCriterion::BestAccuracy),
        ThresholdSpec::Criterion(ThresholdCriterion::FarTarget(1e-3)),
        ThresholdSpec::Default,
    ]
}

fn default_fit_data() -> FitData {
    FitData::BasisPairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: ExperimentMode,
    /// Black-box only: apply the correction matrix.
    #[serde(default = "yes")]
    pub use_correction: bool,
    pub k: usize,
    #[serde(default = "default_attribute")]
    pub attribute: String,
    pub n_targets: usize,
    /// Attributed identities used for the PCA basis.
    #[serde(default = "default_population")]
    pub population: usize,
    /// Index of the attacker's local model (ignored for white-box).
    #[serde(default)]
    pub local_model: usize,
    #[serde(default = "default_fit_data")]
    pub fit_data: FitData,
    #[serde(default = "default_held_out_pairs")]
    pub held_out_pairs: usize,
    /// Center the feature cloud before PCA.
    #[serde(default = "yes")]
    pub centered_pca: bool,
}

impl AttackConfig {
    pub fn attack_mode(&self) -> AttackMode {
        match (self.mode, self.use_correction) {
            (ExperimentMode::WhiteBox, _) => AttackMode::WhiteBox,
            (ExperimentMode::Transfer, _) => AttackMode::Transfer,
            (ExperimentMode::BlackBox, true) => AttackMode::BlackBoxR,
            (ExperimentMode::BlackBox, false) => AttackMode::BlackBoxNoR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. The world seed and every random stream derive from it.
    pub seed: u64,
    #[serde(default)]
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub attack: AttackConfig,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<ThresholdSpec>,
    /// Genuine and impostor pairs used to calibrate thresholds.
    #[serde(default = "default_calibration_pairs")]
    pub calibration_pairs: usize,
    /// Write the crafted images into the result lines.
    #[serde(default = "yes")]
    pub store_images: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let a = &self.attack;
        if !self.world.attributes.contains(&a.attribute) {
            return Err(Error::Config(format!(
                "attack attribute '{}' is not one of the world attributes {:?}",
                a.attribute, self.world.attributes
            )));
        }
        if a.n_targets == 0 {
            return Err(Error::Config("n_targets must be at least 1".into()));
        }
        if a.k == 0 || a.k > self.world.d {
            return Err(Error::Config(format!("k must be in 1..=d, got {}", a.k)));
        }
        if a.local_model >= self.world.n_models {
            return Err(Error::Config(format!(
                "local_model {} out of range ({} models)",
                a.local_model, self.world.n_models
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        let mut names: Vec<String> = self.thresholds.iter().map(|t| t.name()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.thresholds.len() {
            return Err(Error::Config("threshold names must be unique".into()));
        }
        if self.calibration_pairs < 2 {
            return Err(Error::Config("calibration_pairs must be at least 2".into()));
        }
        Ok(())
    }

    /// The world exactly as built: its seed is derived from the master seed.
    pub fn effective_world(&self) -> WorldConfig {
        WorldConfig {
            seed: ssal_core::rng::derive_seed(self.seed, "world"),
            ..self.world.clone()
        }
    }

    /// Hash of everything that influences results (the output directory is excluded).
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        ssal_core::io::fingerprint(&canonical)
    }
}
