//! Experiment configuration.
//!
//! Configurations are flat TOML tables whose keys are the field names of
//! [`ExperimentConfig`]. Missing keys take their defaults and unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::AggregatorSpec;
use crate::attacks::{AttackObjective, AttackSpec, KnowledgeMode};
use crate::defenses::DefenseKind;
use crate::models::ModelSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// IDX files in `data_dir`.
    Mnist,
    /// A headered CSV at `csv_path`.
    Csv,
    /// Synthetic Gaussian blobs.
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Lr,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleChoice {
    Mean,
    Krum,
    TrimmedMean,
    Median,
    Bulyan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackChoice {
    None,
    /// Crafted against Krum.
    Krum,
    /// Crafted against trimmed mean.
    TrimmedMean,
    /// Crafted against the median.
    Median,
    /// The Krum attack, used against Bulyan.
    Bulyan,
    Gaussian,
    LabelFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The final iterate.
    Last,
    /// The iterate with the lowest validation error, earliest on ties.
    BestValidation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub data_dir: PathBuf,
    pub csv_path: PathBuf,
    pub csv_label_column: String,
    /// Class count for CSV and blob data; MNIST infers it.
    pub classes: Option<usize>,
    /// Subsample the training set to this many rows.
    pub train_size: Option<usize>,
    /// Subsample the test set to this many rows.
    pub test_size: Option<usize>,
    /// Share of CSV or blob rows held out for testing.
    pub test_fraction: f64,
    pub blob_features: usize,
    pub blob_per_class: usize,
    pub blob_spread: f64,

    pub devices: usize,
    pub compromised: usize,
    pub noniid: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub local_rounds: usize,
    pub batch_size: usize,
    /// Devices sampled per iteration; all of them when absent.
    pub sampled_devices: Option<usize>,
    pub poison_fraction: f64,

    pub model: ModelChoice,
    pub hidden: usize,

    pub rule: RuleChoice,
    /// Trimmed-mean β; defaults to `compromised`.
    pub trim: Option<usize>,
    pub bulyan_theta: Option<usize>,
    pub bulyan_gamma: Option<usize>,

    pub attack: AttackChoice,
    pub knowledge: KnowledgeMode,
    pub objective: AttackObjective,
    pub epsilon: f64,
    pub interval_factor: f64,
    pub lambda_threshold: f64,

    pub defense: DefenseKind,
    pub validation_size: usize,
    pub selection: Selection,

    pub seed: u64,
    pub trials: usize,
    /// Training rows used for the per-iteration loss; 0 means all.
    pub loss_sample: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            csv_path: PathBuf::from("data/breast_cancer.csv"),
            csv_label_column: "diagnosis".to_string(),
            classes: None,
            train_size: None,
            test_size: None,
            test_fraction: 0.2,
            blob_features: 10,
            blob_per_class: 100,
            blob_spread: 0.3,
            devices: 100,
            compromised: 20,
            noniid: 0.5,
            learning_rate: 0.5,
            iterations: 500,
            local_rounds: 1,
            batch_size: 32,
            sampled_devices: None,
            poison_fraction: 1.0,
            model: ModelChoice::Lr,
            hidden: 32,
            rule: RuleChoice::Mean,
            trim: None,
            bulyan_theta: None,
            bulyan_gamma: None,
            attack: AttackChoice::None,
            knowledge: KnowledgeMode::Full,
            objective: AttackObjective::DirectedDeviation,
            epsilon: 0.01,
            interval_factor: 2.0,
            lambda_threshold: 1e-5,
            defense: DefenseKind::None,
            validation_size: 100,
            selection: Selection::Last,
            seed: 0,
            trials: 1,
            loss_sample: 1000,
        }
    }
}

/// Parses a command-line override value as a TOML value, falling back to a
/// plain string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies a `key=value` override to a configuration table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not of the form key=value")))?;
    table.insert(key.trim().to_string(), parse_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Devices taking part in each iteration.
    pub fn sampled(&self) -> usize {
        self.sampled_devices.unwrap_or(self.devices)
    }

    pub fn trim_count(&self) -> usize {
        self.trim.unwrap_or(self.compromised)
    }

    /// The master's aggregation rule.
    pub fn aggregator(&self) -> Result<AggregatorSpec> {
        self.rule_spec(self.rule, self.compromised, self.sampled())
    }

    fn rule_spec(&self, rule: RuleChoice, c: usize, m: usize) -> Result<AggregatorSpec> {
        Ok(match rule {
            RuleChoice::Mean => AggregatorSpec::Mean,
            RuleChoice::Krum => AggregatorSpec::Krum { c },
            RuleChoice::TrimmedMean => AggregatorSpec::TrimmedMean { beta: self.trim_count() },
            RuleChoice::Median => AggregatorSpec::Median,
            RuleChoice::Bulyan => match (self.bulyan_theta, self.bulyan_gamma) {
                (None, None) => AggregatorSpec::bulyan_default(m, c)?,
                (theta, gamma) => {
                    let theta = theta.unwrap_or(m.saturating_sub(2 * c));
                    AggregatorSpec::Bulyan { c, theta, gamma: gamma.unwrap_or(theta.saturating_sub(2 * c)) }
                }
            },
        })
    }

    /// The rule the attacker crafts against, given `c` compromised devices
    /// among `m` sampled ones. `None` for attacks that do not target a rule.
    pub fn attack_target(&self, c: usize, m: usize) -> Result<Option<AggregatorSpec>> {
        let rule = match self.attack {
            AttackChoice::None | AttackChoice::Gaussian | AttackChoice::LabelFlip => return Ok(None),
            AttackChoice::Krum => RuleChoice::Krum,
            AttackChoice::TrimmedMean => RuleChoice::TrimmedMean,
            AttackChoice::Median => RuleChoice::Median,
            AttackChoice::Bulyan => RuleChoice::Bulyan,
        };
        self.rule_spec(rule, c, m).map(Some)
    }

    pub fn attack_spec(&self, target: AggregatorSpec) -> AttackSpec {
        AttackSpec {
            target,
            objective: self.objective,
            epsilon: self.epsilon,
            interval_factor: self.interval_factor,
            lambda_threshold: self.lambda_threshold,
        }
    }

    pub fn model_spec(&self, inputs: usize, classes: usize) -> ModelSpec {
        match self.model {
            ModelChoice::Lr => ModelSpec::logistic(inputs, classes),
            ModelChoice::Mlp => ModelSpec::mlp(inputs, self.hidden, classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, c) = (self.devices, self.compromised);
        if m == 0 {
            return Err(Error::config("devices must be positive"));
        }
        if 2 * c >= m {
            return Err(Error::config(format!("compromised devices must be fewer than half: c={c}, m={m}")));
        }
        let k = self.sampled();
        if k == 0 || k > m {
            return Err(Error::config(format!("sampled_devices must lie in 1..={m}, got {k}")));
        }
        if !(self.noniid > 0.0 && self.noniid <= 1.0) {
            return Err(Error::config(format!("noniid must lie in (0, 1], got {}", self.noniid)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.iterations == 0 || self.local_rounds == 0 || self.batch_size == 0 || self.trials == 0 {
            return Err(Error::config("iterations, local_rounds, batch_size and trials must be positive"));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::config(format!("poison_fraction must lie in [0, 1], got {}", self.poison_fraction)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.model == ModelChoice::Mlp && self.hidden == 0 {
            return Err(Error::config("hidden must be positive for the MLP"));
        }
        if self.rule == RuleChoice::TrimmedMean && self.trim_count() < c {
            return Err(Error::config(format!("trim must be at least compromised ({c}), got {}", self.trim_count())));
        }
        self.aggregator()?.validate(k)?;
        if let Some(target) = self.attack_target(c, m)? {
            self.attack_spec(target).validate()?;
        }
        if self.validation_size == 0 {
            return Err(Error::config("validation_size must be positive"));
        }
        Ok(())
    }
}
