use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneKind, BaselineConfig, DcacConfig};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpnConfig {
    /// 1-based backbone stage (or block) indices feeding the pyramid, shallowest first.
    pub input_stages: Vec<usize>,
    pub fpn_channels: usize,
    /// Stride-2 levels stacked above the top lateral level.
    pub extra_levels: usize,
}

impl FpnConfig {
    /// Default pyramid inputs: the attention-condenser backbone skips stage 1,
    /// the baseline skips blocks 1-3.
    pub fn default_for(kind: BackboneKind) -> Self {
        let input_stages = match kind {
            BackboneKind::Dcac => vec![2, 3, 4],
            BackboneKind::Baseline => vec![4, 5, 6, 7],
        };
        FpnConfig { input_stages, fpn_channels: 64, extra_levels: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    /// Height / width.
    pub aspect_ratios: Vec<f64>,
    /// Anchor base size as a multiple of the level stride.
    pub size_per_stride: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            size_per_stride: 4.0,
        }
    }
}

impl AnchorConfig {
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// 3x3 conv layers in each sub-net before its output layer.
    pub subnet_depth: usize,
    /// Initial foreground probability encoded in the classification bias.
    pub prior_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub top_k_per_level: usize,
    pub max_detections: usize,
}

/// Every architecture, loss and post-processing knob of a detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub name: String,
    pub num_classes: usize,
    /// Square side length images are resized to before the forward pass.
    pub input_size: usize,
    pub backbone: BackboneConfig,
    pub fpn: FpnConfig,
    pub anchors: AnchorConfig,
    pub head: HeadConfig,
    pub matching: MatchConfig,
    pub loss: LossConfig,
    pub inference: InferenceConfig,
}

impl DetectorConfig {
    fn with_backbone(name: &str, num_classes: usize, backbone: BackboneConfig) -> Self {
        let fpn = FpnConfig::default_for(backbone.kind());
        DetectorConfig {
            name: name.to_string(),
            num_classes,
            input_size: 512,
            backbone,
            fpn,
            anchors: AnchorConfig::default(),
            head: HeadConfig { subnet_depth: 2, prior_prob: 0.01 },
            matching: MatchConfig { pos_iou: 0.5, neg_iou: 0.4 },
            loss: LossConfig { focal_alpha: 0.25, focal_gamma: 2.0, smooth_l1_beta: 1.0 / 9.0 },
            inference: InferenceConfig { score_thresh: 0.05, nms_iou: 0.5, top_k_per_level: 1000, max_detections: 100 },
        }
    }

    /// Desk-scale attention-condenser detector.
    pub fn toy_pcbdet(num_classes: usize) -> Self {
        Self::with_backbone("pcbdet-toy", num_classes, BackboneConfig::Dcac(DcacConfig::default()))
    }

    /// Desk-scale inverted-bottleneck baseline detector.
    pub fn toy_baseline(num_classes: usize) -> Self {
        Self::with_backbone("baseline-toy", num_classes, BackboneConfig::Baseline(BaselineConfig::default()))
    }

    /// Full-width head: 256 pyramid channels and four-layer sub-nets.
    pub fn full_width(mut self) -> Self {
        self.fpn.fpn_channels = 256;
        self.head.subnet_depth = 4;
        self
    }

    pub fn backbone_kind(&self) -> BackboneKind {
        self.backbone.kind()
    }

    /// Strides of the pyramid levels, shallowest first.
    pub fn pyramid_strides(&self) -> Vec<usize> {
        let strides = self.backbone.strides();
        let mut out: Vec<usize> = self.fpn.input_stages.iter().map(|&i| strides[i - 1]).collect();
        let top = *out.last().unwrap_or(&1);
        out.extend((1..=self.fpn.extra_levels).map(|k| top << k));
        out
    }

    pub fn max_stride(&self) -> usize {
        self.pyramid_strides().into_iter().max().unwrap_or(1).max(32)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.backbone {
            BackboneConfig::Dcac(c) => c.validate()?,
            BackboneConfig::Baseline(c) => c.validate()?,
        }
        if self.num_classes == 0 {
            return Err(config_err!("num_classes must be positive"));
        }
        let stages = self.backbone.num_stages();
        if self.fpn.input_stages.is_empty() {
            return Err(config_err!("fpn.input_stages must not be empty"));
        }
        if let Some(&bad) = self.fpn.input_stages.iter().find(|&&i| i == 0 || i > stages) {
            return Err(config_err!("fpn.input_stages: stage {bad} does not exist (backbone has {stages})"));
        }
        if !self.fpn.input_stages.windows(2).all(|w| w[0] < w[1]) {
            return Err(config_err!("fpn.input_stages must be strictly increasing: {:?}", self.fpn.input_stages));
        }
        let strides: Vec<usize> = self.fpn.input_stages.iter().map(|&i| self.backbone.strides()[i - 1]).collect();
        if !strides.windows(2).all(|w| w[1] % w[0] == 0) {
            return Err(config_err!("fpn input strides {strides:?} must each divide the next"));
        }
        if self.fpn.fpn_channels == 0 {
            return Err(config_err!("fpn.fpn_channels must be positive"));
        }
        if self.anchors.scales.is_empty() || self.anchors.aspect_ratios.is_empty() {
            return Err(config_err!("anchors need at least one scale and one aspect ratio"));
        }
        if self.anchors.scales.iter().chain(&self.anchors.aspect_ratios).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(config_err!("anchor scales and aspect ratios must be positive"));
        }
        if !(self.anchors.size_per_stride > 0.0) {
            return Err(config_err!("anchors.size_per_stride must be positive"));
        }
        if !(self.head.prior_prob > 0.0 && self.head.prior_prob < 1.0) {
            return Err(config_err!("head.prior_prob must be in (0, 1), got {}", self.head.prior_prob));
        }
        if self.matching.pos_iou < self.matching.neg_iou {
            return Err(config_err!(
                "matching.pos_iou {} must be >= matching.neg_iou {}",
                self.matching.pos_iou,
                self.matching.neg_iou
            ));
        }
        if !(self.loss.focal_alpha > 0.0 && self.loss.focal_alpha <= 1.0) {
            return Err(config_err!("loss.focal_alpha must be in (0, 1], got {}", self.loss.focal_alpha));
        }
        if self.loss.focal_gamma < 0.0 {
            return Err(config_err!("loss.focal_gamma must be >= 0, got {}", self.loss.focal_gamma));
        }
        if !(self.loss.smooth_l1_beta > 0.0) {
            return Err(config_err!("loss.smooth_l1_beta must be positive"));
        }
        if self.input_size == 0 || self.input_size % self.max_stride() != 0 {
            return Err(config_err!(
                "input_size {} must be a positive multiple of the largest pyramid stride {}",
                self.input_size,
                self.max_stride()
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err!("serialising detector config: {e}"))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DetectorConfig = toml::from_str(text).map_err(|e| config_err!("detector config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: DetectorConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
