//! Seven-block inverted-bottleneck encoder used as the comparison baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvUnit;
use super::{StageOutput, StageOutputs};
use crate::error::{config_err, Result};
use crate::nn::{Activation, Graph, NodeId, ParamStore, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub block_channels: Vec<usize>,
    pub expansion: f64,
    /// Inverted-bottleneck units stacked in each block.
    pub block_repeats: Vec<usize>,
    /// Squeeze-excite width as a fraction of the block input channels.
    pub se_ratio: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            block_channels: vec![16, 24, 40, 80, 112, 160, 224],
            expansion: 6.0,
            block_repeats: vec![1, 1, 2, 2, 2, 2, 1],
            se_ratio: 0.25,
        }
    }
}

impl BaselineConfig {
    pub const BLOCKS: usize = 7;
    /// Output stride of every block; the last four sit at 4, 8, 16, 32.
    pub const STRIDES: [usize; 7] = [2, 2, 4, 4, 8, 16, 32];

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.len() != Self::BLOCKS || self.block_repeats.len() != Self::BLOCKS {
            return Err(config_err!(
                "baseline encoder needs exactly 7 blocks, got {} channel / {} repeat entries",
                self.block_channels.len(),
                self.block_repeats.len()
            ));
        }
        if self.block_channels.iter().any(|&c| c == 0) || self.block_repeats.iter().any(|&r| r == 0) {
            return Err(config_err!("block channels and repeats must be positive"));
        }
        if self.expansion < 1.0 {
            return Err(config_err!("expansion must be >= 1, got {}", self.expansion));
        }
        if !(self.se_ratio > 0.0 && self.se_ratio <= 1.0) {
            return Err(config_err!("se_ratio must be in (0, 1], got {}", self.se_ratio));
        }
        Ok(())
    }
}

/// expand 1x1 -> depthwise 3x3 -> squeeze-excite -> project 1x1 (+ residual)
#[derive(Clone, Debug, PartialEq)]
struct MbConv {
    expand: Option<ConvUnit>,
    dw: ConvUnit,
    se_reduce: ConvUnit,
    se_expand: ConvUnit,
    project: ConvUnit,
    residual: bool,
}

impl MbConv {
    fn new(prefix: &str, c_in: usize, c_out: usize, stride: usize, cfg: &BaselineConfig) -> Self {
        let hidden = ((c_in as f64 * cfg.expansion).round() as usize).max(c_in);
        let se = ((c_in as f64 * cfg.se_ratio).round() as usize).max(1);
        MbConv {
            expand: (hidden != c_in).then(|| ConvUnit::new(format!("{prefix}.expand"), c_in, hidden, 1)),
            dw: ConvUnit::new(format!("{prefix}.dw"), hidden, hidden, 3).stride(stride).groups(hidden),
            se_reduce: ConvUnit::new(format!("{prefix}.se_reduce"), hidden, se, 1).plain(),
            se_expand: ConvUnit::new(format!("{prefix}.se_expand"), se, hidden, 1).plain().act(Some(Activation::Sigmoid)),
            project: ConvUnit::new(format!("{prefix}.project"), hidden, c_out, 1).act(None),
            residual: stride == 1 && c_in == c_out,
        }
    }

    fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.expand.iter().chain([&self.dw, &self.se_reduce, &self.se_expand, &self.project])
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        if let Some(e) = &self.expand {
            h = e.forward(g, store, h)?;
        }
        h = self.dw.forward(g, store, h)?;
        let squeezed = g.global_avg_pool(h)?;
        let s = self.se_reduce.forward(g, store, squeezed)?;
        let gate = self.se_expand.forward(g, store, s)?;
        h = g.scale_channels(h, gate)?;
        h = self.project.forward(g, store, h)?;
        if self.residual {
            h = g.add(h, x)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineBackbone {
    pub cfg: BaselineConfig,
    stem: ConvUnit,
    blocks: Vec<Vec<MbConv>>,
}

impl BaselineBackbone {
    pub fn new(cfg: &BaselineConfig) -> Result<Self> {
        cfg.validate()?;
        let stem_c = cfg.block_channels[0].max(8);
        let stem = ConvUnit::new(format!("{}stem", super::stage_prefix(1)), 3, stem_c, 3).stride(2);
        let mut blocks = Vec::new();
        let mut c_prev = stem_c;
        let mut stride_prev = 2;
        for (i, (&c, &reps)) in cfg.block_channels.iter().zip(&cfg.block_repeats).enumerate() {
            let prefix = super::stage_prefix(i + 1);
            let first_stride = BaselineConfig::STRIDES[i] / stride_prev;
            let units = (0..reps)
                .map(|r| {
                    let (c_in, s) = if r == 0 { (c_prev, first_stride) } else { (c, 1) };
                    MbConv::new(&format!("{prefix}mb{r}"), c_in, c, s, cfg)
                })
                .collect();
            blocks.push(units);
            c_prev = c;
            stride_prev = BaselineConfig::STRIDES[i];
        }
        Ok(BaselineBackbone { cfg: cfg.clone(), stem, blocks })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.stem.init(store, rng)?;
        for unit in self.blocks.iter().flatten() {
            for u in unit.units() {
                u.init(store, rng)?;
            }
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: NodeId) -> Result<StageOutputs> {
        let mut x = self.stem.forward(g, store, image)?;
        let mut outs = Vec::new();
        for (i, units) in self.blocks.iter().enumerate() {
            for u in units {
                x = u.forward(g, store, x)?;
            }
            outs.push(StageOutput {
                index: i + 1,
                node: x,
                stride: BaselineConfig::STRIDES[i],
                channels: self.cfg.block_channels[i],
            });
        }
        Ok(StageOutputs(outs))
    }
}
