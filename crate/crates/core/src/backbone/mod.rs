//! Feature encoders: the four-stage attention-condenser backbone and the
//! seven-block inverted-bottleneck baseline it is compared against.

mod baseline;
mod dcac;
pub mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{BaselineBackbone, BaselineConfig};
pub use dcac::{fitting_condense_factor, DcacBackbone, DcacConfig, DcacModule, DcacOutput};

use crate::error::{config_err, Result};
use crate::nn::{Graph, NodeId, ParamStore, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    Dcac(DcacConfig),
    Baseline(BaselineConfig),
}

impl BackboneConfig {
    pub fn kind(&self) -> BackboneKind {
        match self {
            BackboneConfig::Dcac(_) => BackboneKind::Dcac,
            BackboneConfig::Baseline(_) => BackboneKind::Baseline,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.kind().num_stages()
    }

    pub fn strides(&self) -> &'static [usize] {
        match self {
            BackboneConfig::Dcac(_) => &DcacConfig::STRIDES,
            BackboneConfig::Baseline(_) => &BaselineConfig::STRIDES,
        }
    }

    pub fn channels(&self) -> &[usize] {
        match self {
            BackboneConfig::Dcac(c) => &c.stage_channels,
            BackboneConfig::Baseline(c) => &c.block_channels,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Dcac,
    Baseline,
}

impl BackboneKind {
    pub fn num_stages(self) -> usize {
        match self {
            BackboneKind::Dcac => DcacConfig::STAGES,
            BackboneKind::Baseline => BaselineConfig::BLOCKS,
        }
    }
}

/// Name prefix shared by every parameter of stage (or block) `index`, 1-based.
pub fn stage_prefix(index: usize) -> String {
    format!("backbone.stage{index}.")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageOutput {
    /// 1-based stage (or block) index.
    pub index: usize,
    pub node: NodeId,
    pub stride: usize,
    pub channels: usize,
}

/// Ordered encoder outputs, shallowest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutputs(pub Vec<StageOutput>);

impl StageOutputs {
    pub fn get(&self, index: usize) -> Option<&StageOutput> {
        self.0.iter().find(|s| s.index == index)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StageOutput> {
        self.0.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Dcac(DcacBackbone),
    Baseline(BaselineBackbone),
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig) -> Result<Self> {
        Ok(match cfg {
            BackboneConfig::Dcac(c) => Backbone::Dcac(DcacBackbone::new(c)?),
            BackboneConfig::Baseline(c) => Backbone::Baseline(BaselineBackbone::new(c)?),
        })
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Dcac(_) => BackboneKind::Dcac,
            Backbone::Baseline(_) => BackboneKind::Baseline,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        match self {
            Backbone::Dcac(b) => b.init(store, rng),
            Backbone::Baseline(b) => b.init(store, rng),
        }
    }

    /// Encodes an `n x 3 x H x W` image; `H` and `W` must be multiples of 32.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: NodeId) -> Result<StageOutputs> {
        let s = g.shape(image);
        if s.c() != 3 {
            return Err(config_err!("backbone expects 3-channel images, got {s}"));
        }
        if s.h() == 0 || s.w() == 0 || s.h() % 32 != 0 || s.w() % 32 != 0 {
            return Err(config_err!("image height and width must be positive multiples of 32, got {}x{}", s.h(), s.w()));
        }
        match self {
            Backbone::Dcac(b) => b.forward(g, store, image).map(|(o, _)| o),
            Backbone::Baseline(b) => b.forward(g, store, image),
        }
    }
}

/// Marks parameters of stages `1..=n_frozen` frozen and every other parameter trainable.
pub fn freeze_stages<T: Real>(store: &mut ParamStore<T>, kind: BackboneKind, n_frozen: usize) -> Result<()> {
    let stages = kind.num_stages();
    if n_frozen > stages {
        return Err(config_err!("n_frozen {n_frozen} out of range 0..={stages} for {kind:?} backbone"));
    }
    store.unfreeze_all();
    for i in 1..=n_frozen {
        if store.set_frozen_prefix(&stage_prefix(i), true) == 0 {
            return Err(config_err!("no parameters found for stage {i}"));
        }
    }
    Ok(())
}

/// Element count over the store, optionally only trainable entries.
pub fn count_params<T: Real>(store: &ParamStore<T>, trainable_only: bool) -> usize {
    store.count(trainable_only)
}

/// Parameter count in millions.
pub fn mparams<T: Real>(store: &ParamStore<T>, trainable_only: bool) -> f64 {
    count_params(store, trainable_only) as f64 / 1e6
}
