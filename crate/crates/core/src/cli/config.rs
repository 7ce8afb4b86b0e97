use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationPolicy, SyntheticDatasetSpec};
use crate::detector::DetectorConfig;
use crate::error::{config_err, Error, Result};
use crate::nn::optim::{AdamConfig, WarmupCosine};

/// Where training patches come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A directory written by `patchify` or `synth`.
    Dataset { root: PathBuf },
    /// Boards rendered in memory at the start of the run.
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        spec: SyntheticDatasetSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_frac: f64,
    pub adam: AdamConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { base_lr: 2e-4, final_lr: 0.0, warmup_frac: 0.05, adam: AdamConfig::default() }
    }
}

impl OptimizerConfig {
    pub fn schedule(&self, total_steps: u64) -> WarmupCosine {
        WarmupCosine { base_lr: self.base_lr, final_lr: self.final_lr, warmup_frac: self.warmup_frac, total_steps }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Leading backbone stages (or blocks) kept fixed during training.
    #[serde(default)]
    pub n_frozen: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_detector")]
    pub detector: DetectorConfig,
    pub data: DataSource,
    #[serde(default)]
    pub augment: AugmentationPolicy,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_epochs() -> usize {
    300
}

fn default_batch() -> usize {
    8
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_detector() -> DetectorConfig {
    DetectorConfig::toy_pcbdet(3)
}

impl RunConfig {
    /// Desk-scale run: toy attention-condenser detector on the default synthetic set.
    pub fn toy() -> Self {
        let mut detector = DetectorConfig::toy_pcbdet(3);
        detector.input_size = 128;
        RunConfig {
            seed: 0,
            epochs: 30,
            batch_size: 8,
            n_frozen: 0,
            out: PathBuf::from("runs/toy-pcbdet"),
            detector,
            data: DataSource::Synthetic { seed: 0, spec: SyntheticDatasetSpec::default() },
            augment: AugmentationPolicy::default(),
            optimizer: OptimizerConfig { base_lr: 1e-3, final_lr: 1e-5, warmup_frac: 0.05, adam: AdamConfig::default() },
        }
    }

    /// [`RunConfig::toy`] with the inverted-bottleneck baseline detector.
    pub fn toy_baseline() -> Self {
        let mut cfg = Self::toy();
        cfg.detector = DetectorConfig::toy_baseline(3);
        cfg.detector.input_size = 128;
        cfg.out = PathBuf::from("runs/toy-baseline");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        if self.n_frozen > self.detector.backbone.num_stages() {
            return Err(config_err!("n_frozen {} exceeds the {} backbone stages", self.n_frozen, self.detector.backbone.num_stages()));
        }
        let o = &self.optimizer;
        if !(o.base_lr >= 0.0 && o.base_lr.is_finite()) || !(o.final_lr >= 0.0 && o.final_lr.is_finite()) {
            return Err(config_err!("optimizer.base_lr and optimizer.final_lr must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&o.warmup_frac) {
            return Err(config_err!("optimizer.warmup_frac must be in [0, 1], got {}", o.warmup_frac));
        }
        if let DataSource::Synthetic { spec, .. } = &self.data {
            spec.board.validate()?;
            if spec.board.num_classes != self.detector.num_classes {
                return Err(config_err!(
                    "data.spec.board.num_classes {} does not match detector.num_classes {}",
                    spec.board.num_classes,
                    self.detector.num_classes
                ));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err!("serialising run config: {e}"))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err!("run config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}
