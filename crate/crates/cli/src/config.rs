//! Experiment configuration: a TOML file with one section per pipeline stage.
//! Every field has a default except the dataset declaration, and the handful
//! of flags the CLI exposes override the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fligan_core::{
    AugmentOptions, ClassifierConfig, GanConfig, GanScheduleConfig, TableSchema,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedGan,
    Fligan,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedGan => "fedgan",
            Strategy::Fligan => "fligan",
        }
    }

    pub fn uses_gan(&self) -> bool {
        !matches!(self, Strategy::FedAvg)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Strategy::FedAvg),
            "fedgan" => Ok(Strategy::FedGan),
            "fligan" => Ok(Strategy::Fligan),
            other => Err(CliError::Config(format!(
                "unknown strategy '{other}' (expected fedavg, fedgan, or fligan)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    /// CSV file with a header row.
    pub path: PathBuf,
    /// Class-label column.
    pub target: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
}

impl DatasetSection {
    pub fn schema(&self) -> Result<TableSchema, CliError> {
        TableSchema::new(
            self.categorical.clone(),
            self.continuous.clone(),
            self.target.clone(),
        )
        .map_err(CliError::from)
    }

    /// Stem of the data file, used to label reports.
    pub fn name(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSection {
    pub n_nodes: usize,
    pub alphas: Vec<f64>,
    pub test_fraction: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            n_nodes: 8,
            alphas: vec![0.05, 1.0, 1.5, 2.0],
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub strategies: Vec<Strategy>,
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    /// Run the synthetic-data efficacy check for GAN strategies.
    pub efficacy: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            strategies: vec![Strategy::FedAvg, Strategy::FedGan, Strategy::Fligan],
            seed: 42,
            repeats: 3,
            out_dir: PathBuf::from("runs"),
            efficacy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSection {
    #[serde(flatten)]
    pub gan: GanConfig,
    pub schedule: GanScheduleConfig,
}

impl Default for GanSection {
    fn default() -> Self {
        GanSection {
            gan: GanConfig::default(),
            schedule: GanScheduleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedGanSection {
    pub rounds: usize,
    pub epochs: usize,
}

impl Default for FedGanSection {
    fn default() -> Self {
        FedGanSection { rounds: 5, epochs: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub gan: GanSection,
    #[serde(default)]
    pub fedgan: FedGanSection,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub augment: AugmentOptions,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.schema()?;
        if self.partition.n_nodes == 0 {
            return Err(CliError::Config("partition.n_nodes must be at least 1".into()));
        }
        if self.partition.alphas.is_empty() || self.partition.alphas.iter().any(|&a| !(a > 0.0)) {
            return Err(CliError::Config(
                "partition.alphas must be a non-empty list of positive reals".into(),
            ));
        }
        if !(self.partition.test_fraction > 0.0 && self.partition.test_fraction < 1.0) {
            return Err(CliError::Config("partition.test_fraction must lie in (0, 1)".into()));
        }
        if self.experiment.strategies.is_empty() {
            return Err(CliError::Config("experiment.strategies must not be empty".into()));
        }
        if self.experiment.repeats == 0 {
            return Err(CliError::Config("experiment.repeats must be at least 1".into()));
        }
        if self.fedgan.rounds == 0 || self.fedgan.epochs == 0 {
            return Err(CliError::Config("fedgan.rounds and fedgan.epochs must be positive".into()));
        }
        Ok(())
    }

    /// Seeds of the repeat runs: `seed, seed + 1, ...`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.experiment.repeats)
            .map(|r| self.experiment.seed + r as u64)
            .collect()
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("serialize config: {e}")))
    }
}
