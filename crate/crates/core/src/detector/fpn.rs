use rand::Rng;

use crate::backbone::layers::ConvUnit;
use crate::backbone::StageOutputs;
use crate::error::{config_err, Result};
use crate::nn::{Graph, NodeId, ParamStore, Real};

use super::config::FpnConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidLevel {
    pub node: NodeId,
    pub stride: usize,
}

/// Pyramid levels (shallowest first) plus the backbone stages they were built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
    pub consumed_stages: Vec<usize>,
}

impl Pyramid {
    pub fn strides(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.stride).collect()
    }
}

/// Lateral 1x1 projections, top-down nearest-upsample merge, 3x3 smoothing,
/// then stride-2 3x3 convs stacked on the top level.
#[derive(Clone, Debug, PartialEq)]
pub struct Fpn {
    pub cfg: FpnConfig,
    laterals: Vec<ConvUnit>,
    smooth: Vec<ConvUnit>,
    extras: Vec<ConvUnit>,
}

impl Fpn {
    /// `stage_channels[i]` is the width of backbone stage `i + 1`.
    pub fn new(cfg: &FpnConfig, stage_channels: &[usize]) -> Result<Self> {
        if cfg.fpn_channels == 0 {
            return Err(config_err!("fpn_channels must be positive"));
        }
        let c = cfg.fpn_channels;
        let mut laterals = Vec::new();
        let mut smooth = Vec::new();
        for &s in &cfg.input_stages {
            let c_in = *stage_channels
                .get(s.wrapping_sub(1))
                .ok_or_else(|| config_err!("fpn input stage {s} missing (backbone has {} stages)", stage_channels.len()))?;
            laterals.push(ConvUnit::new(format!("fpn.lateral{s}"), c_in, c, 1).plain().act(None));
            smooth.push(ConvUnit::new(format!("fpn.smooth{s}"), c, c, 3).plain().act(None));
        }
        let extras = (0..cfg.extra_levels)
            .map(|i| ConvUnit::new(format!("fpn.extra{i}"), c, c, 3).stride(2).plain().act(None))
            .collect();
        Ok(Fpn { cfg: cfg.clone(), laterals, smooth, extras })
    }

    fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.laterals.iter().chain(&self.smooth).chain(&self.extras)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.units().try_for_each(|u| u.init(store, rng))
    }

    pub fn param_count(&self) -> usize {
        self.units().map(ConvUnit::param_count).sum()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, stages: &StageOutputs) -> Result<Pyramid> {
        let mut inputs = Vec::with_capacity(self.cfg.input_stages.len());
        for &s in &self.cfg.input_stages {
            let out = stages.get(s).ok_or_else(|| config_err!("fpn input stage {s} not produced by the backbone"))?;
            inputs.push(*out);
        }
        let mut lateral: Vec<NodeId> = Vec::with_capacity(inputs.len());
        for (unit, st) in self.laterals.iter().zip(&inputs) {
            lateral.push(unit.forward(g, store, st.node)?);
        }
        // top-down pass, deepest level first
        for i in (0..lateral.len().saturating_sub(1)).rev() {
            let factor = inputs[i + 1].stride / inputs[i].stride;
            let up = g.upsample(lateral[i + 1], factor)?;
            lateral[i] = g.add(lateral[i], up)?;
        }
        let mut levels = Vec::new();
        for ((unit, st), &x) in self.smooth.iter().zip(&inputs).zip(&lateral) {
            levels.push(PyramidLevel { node: unit.forward(g, store, x)?, stride: st.stride });
        }
        for (i, unit) in self.extras.iter().enumerate() {
            let top = *levels.last().ok_or_else(|| config_err!("fpn has no input stages"))?;
            let x = if i == 0 { top.node } else { g.relu(top.node) };
            levels.push(PyramidLevel { node: unit.forward(g, store, x)?, stride: top.stride * 2 });
        }
        Ok(Pyramid { levels, consumed_stages: inputs.iter().map(|s| s.index).collect() })
    }
}
