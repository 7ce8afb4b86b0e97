use rand::Rng;

use crate::backbone::layers::ConvUnit;
use crate::error::Result;
use crate::nn::{Graph, NodeId, ParamStore, Real, Tensor};

/// Classification and box-regression sub-nets shared by every pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    cls: Vec<ConvUnit>,
    cls_out: ConvUnit,
    reg: Vec<ConvUnit>,
    reg_out: ConvUnit,
    prior_prob: f64,
}

impl Heads {
    pub fn new(channels: usize, depth: usize, per_cell: usize, num_classes: usize, prior_prob: f64) -> Self {
        let tower = |name: &str| {
            (0..depth).map(|i| ConvUnit::new(format!("head.{name}{i}"), channels, channels, 3).plain().init_std(0.01)).collect()
        };
        Heads {
            cls: tower("cls"),
            cls_out: ConvUnit::new("head.cls_out", channels, per_cell * num_classes, 3).plain().act(None).init_std(0.01),
            reg: tower("reg"),
            reg_out: ConvUnit::new("head.reg_out", channels, per_cell * 4, 3).plain().act(None).init_std(0.01),
            prior_prob,
        }
    }

    fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.cls.iter().chain([&self.cls_out]).chain(&self.reg).chain([&self.reg_out])
    }

    /// Initial classification bias `-ln((1 - pi) / pi)`.
    pub fn prior_bias(&self) -> f64 {
        -((1.0 - self.prior_prob) / self.prior_prob).ln()
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.units().try_for_each(|u| u.init(store, rng))?;
        let b = T::lit(self.prior_bias());
        let bias = store.get_mut(&self.cls_out.bias_name())?;
        bias.tensor = Tensor::full(bias.tensor.shape(), b);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.units().map(ConvUnit::param_count).sum()
    }

    /// Dense logits and offsets for one level: `(n x A*K x h x w, n x A*4 x h x w)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<(NodeId, NodeId)> {
        let mut c = x;
        for u in &self.cls {
            c = u.forward(g, store, c)?;
        }
        let cls = self.cls_out.forward(g, store, c)?;
        let mut r = x;
        for u in &self.reg {
            r = u.forward(g, store, r)?;
        }
        let reg = self.reg_out.forward(g, store, r)?;
        Ok((cls, reg))
    }
}
