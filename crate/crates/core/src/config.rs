//! Run configuration: one JSON file with `model`, `loss`, `aug` and `train`
//! sections. Missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugConfig;
use crate::error::Result;
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::pipeline::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub aug: AugConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.aug.validate()?;
        self.train.validate(&self.model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Smoke-run settings: 300 steps of batch 8, no learning-rate drop, LSJ
    /// floor raised to 0.3.
    pub fn ci(seed: u64) -> Self {
        let mut c = RunConfig::default();
        c.model.init_seed = seed;
        c.train.seed = seed;
        c.train.epochs = 3;
        c.train.steps_per_epoch = 100;
        c.train.lr_drop_epoch = 3;
        c.train.batch_size = 8;
        c.aug.lsj.min = 0.3;
        c
    }

    /// Short hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
