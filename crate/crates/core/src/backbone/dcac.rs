//! Double-condensing attention condenser and the backbone built from it.
//!
//! The attention module condenses its input twice (max-pool then avg-pool,
//! each by `condense_factor`), embeds the condensed map with a grouped 1x1
//! convolution that reduces channels by `embed_ratio`, projects back to the
//! input width, squashes through a sigmoid and expands the result with
//! nearest-neighbour upsampling. The input is gated by that map and added to
//! itself: `out = x * gate + x`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvUnit;
use super::{StageOutput, StageOutputs};
use crate::error::{config_err, Result};
use crate::nn::{Activation, Graph, NodeId, ParamStore, PoolKind, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcacConfig {
    pub stage_channels: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub condense_factor: usize,
    pub embed_ratio: f64,
    /// Groups of the 1x1 embedding convolution.
    pub embed_groups: usize,
}

impl Default for DcacConfig {
    fn default() -> Self {
        DcacConfig {
            stage_channels: vec![16, 32, 64, 128],
            stage_blocks: vec![1, 1, 2, 1],
            condense_factor: 2,
            embed_ratio: 0.25,
            embed_groups: 2,
        }
    }
}

impl DcacConfig {
    pub const STAGES: usize = 4;
    pub const STRIDES: [usize; 4] = [4, 8, 16, 32];

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != Self::STAGES || self.stage_blocks.len() != Self::STAGES {
            return Err(config_err!(
                "attention-condenser backbone needs exactly 4 stages, got {} channel / {} block entries",
                self.stage_channels.len(),
                self.stage_blocks.len()
            ));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(config_err!("stage channels must be positive: {:?}", self.stage_channels));
        }
        if self.condense_factor < 2 {
            return Err(config_err!("condense_factor must be >= 2, got {}", self.condense_factor));
        }
        if !(self.embed_ratio > 0.0 && self.embed_ratio <= 1.0) {
            return Err(config_err!("embed_ratio must be in (0, 1], got {}", self.embed_ratio));
        }
        for &c in &self.stage_channels {
            DcacModule::new("probe", c, self.condense_factor, self.embed_ratio, self.embed_groups)?;
        }
        Ok(())
    }
}

/// One double-condensing attention condenser.
#[derive(Clone, Debug, PartialEq)]
pub struct DcacModule {
    pub name: String,
    pub channels: usize,
    pub condense_factor: usize,
    embed: ConvUnit,
    expand: ConvUnit,
}

/// Module output plus the gate it applied, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct DcacOutput {
    pub out: NodeId,
    /// Attention gate at input resolution, values in (0, 1).
    pub gate: NodeId,
}

impl DcacModule {
    pub fn new(name: impl Into<String>, channels: usize, condense_factor: usize, embed_ratio: f64, embed_groups: usize) -> Result<Self> {
        let name = name.into();
        let embed_channels = ((channels as f64 * embed_ratio).round() as usize).max(1);
        if embed_groups == 0 || channels % embed_groups != 0 || embed_channels % embed_groups != 0 {
            return Err(config_err!(
                "embed_groups {embed_groups} must divide channels {channels} and embedding width {embed_channels}"
            ));
        }
        let embed = ConvUnit::new(format!("{name}.embed"), channels, embed_channels, 1).groups(embed_groups).plain();
        let expand = ConvUnit::new(format!("{name}.expand"), embed_channels, channels, 1).plain().act(None);
        Ok(DcacModule { name, channels, condense_factor, embed, expand })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.embed.init(store, rng)?;
        self.expand.init(store, rng)
    }

    /// Runs the module with its configured condense factor; spatial dims must
    /// be divisible by `condense_factor²`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<DcacOutput> {
        self.forward_with_factor(g, store, x, self.condense_factor)
    }

    pub fn forward_with_factor<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId, factor: usize) -> Result<DcacOutput> {
        let s = g.shape(x);
        let span = factor * factor;
        if factor == 0 || s.h() % span != 0 || s.w() % span != 0 {
            return Err(config_err!(
                "{}: spatial dims {}x{} must be divisible by condense_factor^2 = {span}",
                self.name,
                s.h(),
                s.w()
            ));
        }
        if s.c() != self.channels {
            return Err(config_err!("{}: expects {} channels, input is {s}", self.name, self.channels));
        }
        let c1 = g.pool2d(x, PoolKind::Max, factor, factor)?;
        let c2 = g.pool2d(c1, PoolKind::Avg, factor, factor)?;
        let e = self.embed.forward(g, store, c2)?;
        let a = self.expand.forward(g, store, e)?;
        // sigmoid commutes with nearest expansion; squash at the condensed size
        let a = g.activation(a, Activation::Sigmoid);
        let gate = g.upsample(a, span)?;
        let gated = g.mul(x, gate)?;
        let out = g.add(gated, x)?;
        Ok(DcacOutput { out, gate })
    }
}

/// Largest factor `f' <= f` whose square divides both spatial dims (1 at worst).
pub fn fitting_condense_factor(h: usize, w: usize, f: usize) -> usize {
    (1..=f).rev().find(|&k| h % (k * k) == 0 && w % (k * k) == 0).unwrap_or(1)
}

/// depthwise 3x3 -> pointwise 1x1 -> attention condenser
#[derive(Clone, Debug, PartialEq)]
struct DcacBlock {
    dw: ConvUnit,
    pw: ConvUnit,
    attn: DcacModule,
}

impl DcacBlock {
    fn new(prefix: &str, c_in: usize, c_out: usize, stride: usize, cfg: &DcacConfig) -> Result<Self> {
        Ok(DcacBlock {
            dw: ConvUnit::new(format!("{prefix}.dw"), c_in, c_in, 3).stride(stride).groups(c_in),
            pw: ConvUnit::new(format!("{prefix}.pw"), c_in, c_out, 1),
            attn: DcacModule::new(format!("{prefix}.attn"), c_out, cfg.condense_factor, cfg.embed_ratio, cfg.embed_groups)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcacBackbone {
    pub cfg: DcacConfig,
    stem: [ConvUnit; 2],
    stages: Vec<Vec<DcacBlock>>,
}

impl DcacBackbone {
    pub fn new(cfg: &DcacConfig) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.stage_channels[0];
        let stem_c = (c0 / 2).max(8);
        let p1 = super::stage_prefix(1);
        let stem = [
            ConvUnit::new(format!("{p1}stem0"), 3, stem_c, 3).stride(2),
            ConvUnit::new(format!("{p1}stem1"), stem_c, c0, 3).stride(2),
        ];
        let mut stages = Vec::new();
        let mut c_prev = c0;
        for (i, (&c, &n)) in cfg.stage_channels.iter().zip(&cfg.stage_blocks).enumerate() {
            let prefix = super::stage_prefix(i + 1);
            let mut blocks = Vec::new();
            // stage 1 runs at the stem's resolution; later stages open with a stride-2 block
            let n = if i == 0 { n } else { n.max(1) };
            for b in 0..n {
                let stride = if i > 0 && b == 0 { 2 } else { 1 };
                let c_in = if b == 0 { c_prev } else { c };
                blocks.push(DcacBlock::new(&format!("{prefix}block{b}"), c_in, c, stride, cfg)?);
            }
            stages.push(blocks);
            c_prev = c;
        }
        Ok(DcacBackbone { cfg: cfg.clone(), stem, stages })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        for u in &self.stem {
            u.init(store, rng)?;
        }
        for b in self.stages.iter().flatten() {
            b.dw.init(store, rng)?;
            b.pw.init(store, rng)?;
            b.attn.init(store, rng)?;
        }
        Ok(())
    }

    /// Forward pass; also returns every attention gate for inspection.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: NodeId) -> Result<(StageOutputs, Vec<NodeId>)> {
        let mut x = image;
        for u in &self.stem {
            x = u.forward(g, store, x)?;
        }
        let mut outs = Vec::new();
        let mut gates = Vec::new();
        for (i, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                x = b.dw.forward(g, store, x)?;
                x = b.pw.forward(g, store, x)?;
                let s = g.shape(x);
                let f = fitting_condense_factor(s.h(), s.w(), b.attn.condense_factor);
                let o = b.attn.forward_with_factor(g, store, x, f)?;
                gates.push(o.gate);
                x = o.out;
            }
            outs.push(StageOutput {
                index: i + 1,
                node: x,
                stride: DcacConfig::STRIDES[i],
                channels: self.cfg.stage_channels[i],
            });
        }
        Ok((StageOutputs(outs), gates))
    }
}
