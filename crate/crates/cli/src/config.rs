//! Experiment configuration: one TOML file covering population, training,
//! evaluation and outputs.
//!
//! ```toml
//! seed = 11                # overrides population.seed and train.seed
//! output_dir = "out"
//! baseline = true          # also train a regression-only twin
//!
//! [population]             # see cpt_core::synth::PopulationConfig
//! users = 400
//!
//! [train]                  # see cpt_core::trainer::TrainConfig
//! variant = "multi"
//!
//! [eval]
//! pairs_per_user = 100
//! targets = ["magnitude", "affinity", "binary"]
//! ```

use std::path::{Path, PathBuf};

use cpt_core::eval::Metric;
use cpt_core::synth::PopulationConfig;
use cpt_core::trainer::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    /// URegAUC against the observed magnitude.
    Magnitude,
    /// UAUC against a within-user top-half-by-affinity label.
    Affinity,
    /// UAUC against the sparse binary label.
    Binary,
}

impl EvalTarget {
    pub fn name(self) -> &'static str {
        match self {
            EvalTarget::Magnitude => "magnitude",
            EvalTarget::Affinity => "affinity",
            EvalTarget::Binary => "binary",
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            EvalTarget::Magnitude => Metric::UregAuc,
            EvalTarget::Affinity | EvalTarget::Binary => Metric::Uauc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub pairs_per_user: usize,
    pub targets: Vec<EvalTarget>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pairs_per_user: cpt_core::eval::DEFAULT_PAIRS_PER_USER,
            targets: vec![EvalTarget::Magnitude, EvalTarget::Affinity, EvalTarget::Binary],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub baseline: bool,
    pub population: PopulationConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("out"),
            baseline: true,
            population: PopulationConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config: Self = toml::from_str(text).map_err(|e| CliError::validation(e.to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    /// Applies seed overrides and validates every section.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if let Some(seed) = self.seed {
            self.population.seed = seed;
            self.train.seed = seed;
        }
        self.seed = Some(self.train.seed);
        self.population.validate().map_err(|e| CliError::validation(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::validation(e.to_string()))?;
        if self.eval.pairs_per_user == 0 {
            return Err(CliError::validation("eval.pairs_per_user must be at least 1"));
        }
        if self.eval.targets.is_empty() {
            return Err(CliError::validation("eval.targets must name at least one target"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Result<Self, CliError> {
        self.seed = Some(seed);
        self.resolve()?;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Training config of the regression-only comparison model.
    pub fn baseline_train(&self) -> TrainConfig {
        TrainConfig { variant: Variant::Regression, ..self.train.clone() }
    }

    /// SHA-256 of the canonical JSON form, excluding output paths.
    pub fn hash(&self) -> String {
        let canonical = serde_json::json!({
            "seed": self.seed,
            "baseline": self.baseline,
            "population": self.population,
            "train": self.train,
            "eval": self.eval,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}
