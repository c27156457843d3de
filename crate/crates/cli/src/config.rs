use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasadapt::bilevel::TrainConfig;
use biasadapt::data::{ImbalanceKind, ImbalanceProfile};
use biasadapt::model::{AttractorNorm, ModelDims};
use serde::{Deserialize, Serialize};

/// Class-count recipe without the class count, which the data section owns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: ImbalanceKind,
    #[serde(default = "one")]
    pub gamma: f64,
    pub n1: usize,
}

fn one() -> f64 {
    1.0
}

impl ProfileSpec {
    pub fn with_classes(&self, num_classes: usize) -> biasadapt::Result<ImbalanceProfile> {
        ImbalanceProfile::new(self.kind, self.gamma, self.n1, num_classes)
    }
}

/// Either synthesized Gaussian-mixture splits or three CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub num_classes: usize,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub csv: Option<CsvPaths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub separation: f64,
    pub labeled: ProfileSpec,
    pub unlabeled: ProfileSpec,
    pub test: ProfileSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvPaths {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    #[serde(default = "default_attractor_hidden")]
    pub attractor_hidden: usize,
    #[serde(default)]
    pub attractor_norm: AttractorNorm,
}

fn default_attractor_hidden() -> usize {
    biasadapt::model::DEFAULT_ATTRACTOR_HIDDEN
}

impl ModelConfig {
    pub fn dims(&self, input_dim: usize, num_classes: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            num_classes,
            attractor_hidden: self.attractor_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Iterations between evaluations of the test set.
    pub interval: u64,
    /// Number of most recent evaluations averaged into the headline metrics.
    pub last: usize,
    pub use_ema: bool,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
    pub output_dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 50,
            last: 20,
            use_ema: true,
            checkpoint_interval: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.data.num_classes;
        match (&self.data.synth, &self.data.csv) {
            (Some(s), None) => {
                for p in [&s.labeled, &s.unlabeled, &s.test] {
                    p.with_classes(k)?;
                }
                if s.dim < 2 {
                    bail!("data.synth.dim must be >= 2");
                }
                if !(s.separation >= 0.0) {
                    bail!("data.synth.separation must be >= 0");
                }
            }
            (None, Some(_)) => {}
            _ => bail!("exactly one of [data.synth] and [data.csv] must be given"),
        }
        self.model.dims(1, k).validate()?;
        self.train.validate(k)?;
        if self.eval.interval == 0 || self.eval.last == 0 {
            bail!("eval.interval and eval.last must be positive");
        }
        Ok(())
    }
}
