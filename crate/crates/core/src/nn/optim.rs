use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::Grads;
use super::{ParamStore, Real};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment estimates, one pair of buffers per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T: Real = f32> {
    pub step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        AdamState { step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

/// Applies one Adam update to every non-frozen parameter that has a gradient.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves both the parameters and the optimizer state untouched.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, grads: &Grads<T>, state: &mut AdamState<T>, lr: f64, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads {
        let p = store.get(name)?;
        if g.len() != p.tensor.numel() {
            return Err(config_err!("gradient for {name} has {} entries, parameter has {}", g.len(), p.tensor.numel()));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for {name} at index {i}")));
        }
    }
    state.step += 1;
    if lr == 0.0 {
        return Ok(());
    }
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let step_size = T::lit(lr / bc1);
    let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
    let eps = T::lit(cfg.eps);
    for (name, g) in grads {
        let p = store.get_mut(name)?;
        if p.frozen {
            continue;
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
        for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let denom = vi.sqrt() * inv_sqrt_bc2 + eps;
            *w = *w - step_size * *mi / denom;
        }
    }
    Ok(())
}

/// Linear warmup followed by cosine decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub final_lr: f64,
    /// Fraction of total steps spent warming up.
    pub warmup_frac: f64,
    pub total_steps: u64,
}

impl WarmupCosine {
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        let warmup = (self.warmup_frac * self.total_steps as f64).ceil() as u64;
        if step < warmup {
            return self.base_lr * (step + 1) as f64 / warmup as f64;
        }
        let span = (self.total_steps - warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / span).min(1.0);
        self.final_lr + 0.5 * (self.base_lr - self.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn describe(&self) -> String {
        format!(
            "linear warmup over {:.0}% of {} steps, then cosine decay {:e} -> {:e}",
            self.warmup_frac * 100.0,
            self.total_steps,
            self.base_lr,
            self.final_lr
        )
    }
}
