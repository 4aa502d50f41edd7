use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use lma4rec::augment::AugmentConfig;
use lma4rec::model::ModelConfig;
use lma4rec::train::TrainConfig;

/// Everything one run needs, merged from an optional TOML file and
/// command-line overrides. The resolved config is archived next to the run's
/// outputs so the run can be replayed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; copied into the train and augment configs on resolve.
    pub seed: u64,
    pub cache: PathBuf,
    pub out_dir: PathBuf,
    pub eval_ks: Vec<usize>,
    /// Remove history items from the eval candidate set (off by default:
    /// ranking is over the whole catalog).
    pub mask_history: bool,
    pub lambda_grid: Vec<f64>,
    pub hidden_grid: Vec<usize>,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            cache: PathBuf::from("cache.json"),
            out_dir: PathBuf::from("runs/default"),
            eval_ks: vec![5, 10, 20],
            mask_history: false,
            lambda_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            hidden_grid: vec![64, 128, 192, 256, 320],
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&body)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(cfg)
    }

    /// Push the master seed into the sub-configs.
    pub fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.augment.seed = self.seed;
    }

    /// Archive the resolved config beside the run outputs.
    pub fn archive(&self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let path = out_dir.join("config.toml");
        let body = toml::to_string_pretty(self).context("config serializes to TOML")?;
        std::fs::write(&path, body)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
