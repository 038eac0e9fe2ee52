//! Experiment configuration: one TOML file drives every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::fewshot::{AdaptConfig, TrainConfig, TrainMode};
use crate::model::{ConditioningMode, ModelConfig};
use crate::nn::OptimizerConfig;
use crate::shapegen::DatasetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory.
    pub data: PathBuf,
    /// Checkpoint root; checkpoints go under `<checkpoints>/<hash>/`.
    pub checkpoints: PathBuf,
    /// Output root; everything else goes under `<output>/<hash>/`.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data: "runs/data".into(), checkpoints: "runs/checkpoints".into(), output: "runs/out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed, applied to every stage by the `*_config` accessors.
    pub seed: u64,
    /// Method the per-mode subcommands act on.
    pub mode: TrainMode,
    pub shots: Vec<usize>,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    /// The desk-scale protocol: 4 base and 3 novel classes, 16³ grids,
    /// 32² views.
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            mode: TrainMode::Cgce,
            shots: vec![1, 5, 10, 25],
            paths: Paths::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::desk(ConditioningMode::Gce, 4, 7),
            train: TrainConfig {
                epochs: 20,
                batch_size: 4,
                views_per_shape: 2,
                optimizer: OptimizerConfig::adam(3e-3),
                ..TrainConfig::default()
            },
            adapt: AdaptConfig {
                views_per_shape: Some(4),
                batch_size: Some(20),
                pair_budget: Some(24),
                mcce_learning_rate: Some(0.05),
                ..AdaptConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct Hashed<'a> {
    seed: u64,
    dataset: &'a DatasetConfig,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    adapt: &'a AdaptConfig,
    eval: &'a EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    /// Stage configs with the master seed applied. The dataset seed is
    /// offset by it, every other stage takes it as is.
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig { seed: self.dataset.seed.wrapping_add(self.seed), ..self.dataset.clone() }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { seed: self.seed, ..self.model.clone() }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig { mode, seed: self.seed, ..self.train.clone() }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig { seed: self.seed, ..self.adapt.clone() }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { seed: self.seed, ..self.eval.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots.contains(&0) {
            return Err(Error::Config("shot counts must be positive".into()));
        }
        if self.dataset.resolution != self.model.decoder.resolution || self.dataset.image_size != self.model.encoder.image_size {
            return Err(Error::Config(format!(
                "dataset is {}³ / {}² but the model expects {}³ / {}²",
                self.dataset.resolution, self.dataset.image_size, self.model.decoder.resolution, self.model.encoder.image_size
            )));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over everything that changes results.
    /// Paths, the selected mode and the shot list only choose what to run
    /// inside an experiment and are left out.
    pub fn hash(&self) -> Result<String> {
        let h = Hashed {
            seed: self.seed,
            dataset: &self.dataset,
            model: &self.model,
            train: &self.train,
            adapt: &self.adapt,
            eval: &self.eval,
        };
        let text = toml::to_string(&h).map_err(|e| Error::Config(e.to_string()))?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn experiment_dir(&self) -> Result<PathBuf> {
        Ok(self.paths.output.join(self.hash()?))
    }

    pub fn checkpoint_dir(&self) -> Result<PathBuf> {
        Ok(self.paths.checkpoints.join(self.hash()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig { seed: 3, shots: vec![1, 10], ..ExperimentConfig::default() };
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml("seed = 4\nmode = \"mcce\"\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.mode, TrainMode::Mcce);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.dataset, DatasetConfig::default());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(matches!(ExperimentConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_results_not_selection() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.mode = TrainMode::Gce;
        b.shots = vec![2];
        b.paths.output = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 0;
        b.train.epochs += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 16);
    }

    #[test]
    fn default_is_consistent() {
        ExperimentConfig::default().validate().unwrap();
        let mut c = ExperimentConfig::default();
        c.dataset.resolution = 8;
        assert!(c.validate().is_err());
    }
}
