use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::optim::{adam_step, AdamConfig, AdamState, WarmupCosine};
use crate::nn::params::sum_grads;
use crate::nn::{Graph, Grads, ParamStore, Real};
use crate::par::Exec;

use super::model::{Detector, LossBreakdown, Sample};

/// Loss and parameter gradients of one sample.
pub fn sample_gradients<T: Real>(det: &Detector, store: &ParamStore<T>, sample: &Sample<T>) -> Result<(LossBreakdown, Grads<T>)> {
    let mut g = Graph::new();
    let (root, lb) = det.loss(&mut g, store, sample)?;
    g.backward(root)?;
    Ok((lb, g.param_grads()))
}

/// One optimiser step on the batch mean of per-sample losses.
///
/// Samples are evaluated through `exec`; gradients are reduced in sample
/// order, so parallel and sequential execution give identical updates. On
/// error neither `store` nor `state` is touched.
pub fn train_step<T: Real>(
    det: &Detector,
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    batch: &[Sample<T>],
    lr: f64,
    adam: &AdamConfig,
    exec: Exec,
) -> Result<LossBreakdown> {
    let frozen_view: &ParamStore<T> = store;
    let parts = exec.try_map(batch, |_, s| sample_gradients(det, frozen_view, s))?;
    let n = parts.len().max(1);
    let inv = T::one() / T::lit(n as f64);
    let (losses, grads): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let mut grads = sum_grads(&grads);
    for g in grads.values_mut() {
        for v in g.iter_mut() {
            *v = *v * inv;
        }
    }
    adam_step(store, &grads, state, lr, adam)?;
    let mut mean = LossBreakdown::default();
    for l in &losses {
        mean.focal += l.focal;
        mean.box_reg += l.box_reg;
        mean.n_positive += l.n_positive;
    }
    mean.focal /= n as f64;
    mean.box_reg /= n as f64;
    mean.total = mean.focal + mean.box_reg;
    Ok(mean)
}

/// Optimiser, schedule and execution policy bundled for a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub adam: AdamConfig,
    pub schedule: WarmupCosine,
}

#[derive(Clone, Debug)]
pub struct Trainer<T: Real = f32> {
    pub cfg: TrainerConfig,
    pub state: AdamState<T>,
    pub exec: Exec,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainerConfig, exec: Exec) -> Self {
        Trainer { cfg, state: AdamState::new(), exec }
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.schedule.lr(self.state.step)
    }

    pub fn step(&mut self, det: &Detector, store: &mut ParamStore<T>, batch: &[Sample<T>]) -> Result<LossBreakdown> {
        let lr = self.current_lr();
        train_step(det, store, &mut self.state, batch, lr, &self.cfg.adam, self.exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::freeze_stages;
    use crate::detector::model::tests::tiny_config;
    use crate::geometry::{Annotation, BBox};
    use crate::nn::{grad_check_report, GradCheckOptions, Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample<T: Real>(seed: u64) -> Sample<T> {
        Sample {
            image: Tensor::randn(Shape::new(1, 3, 32, 32), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)),
            annotations: vec![
                Annotation::new(BBox::new(2.0, 3.0, 18.0, 14.0), 0),
                Annotation::new(BBox::new(12.0, 10.0, 30.0, 31.0), 1),
            ],
        }
    }

    #[test]
    fn null_update_with_zero_lr() {
        let det = Detector::new(&tiny_config()).unwrap();
        let mut store = det.init_params::<f32>(0).unwrap();
        let before = store.clone();
        let mut state = AdamState::new();
        let lb = train_step(&det, &mut store, &mut state, &[sample(1)], 0.0, &AdamConfig::default(), Exec::Sequential).unwrap();
        assert!(lb.total.is_finite() && lb.total > 0.0);
        assert_eq!(store, before);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let det = Detector::new(&tiny_config()).unwrap();
        let batch = vec![sample(1), sample(2), sample(3)];
        let run = |exec| {
            let mut store = det.init_params::<f32>(0).unwrap();
            let mut state = AdamState::new();
            let mut log = Vec::new();
            for _ in 0..3 {
                log.push(train_step(&det, &mut store, &mut state, &batch, 1e-3, &AdamConfig::default(), exec).unwrap());
            }
            (store, log)
        };
        assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
    }

    #[test]
    fn overfits_one_image() {
        let det = Detector::new(&tiny_config()).unwrap();
        let mut store = det.init_params::<f32>(0).unwrap();
        let mut state = AdamState::new();
        let s = sample(5);
        let first = train_step(&det, &mut store, &mut state, &[s.clone()], 5e-3, &AdamConfig::default(), Exec::Sequential).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = train_step(&det, &mut store, &mut state, &[s.clone()], 5e-3, &AdamConfig::default(), Exec::Sequential).unwrap();
        }
        assert!(last.total < first.total, "{} -> {}", first.total, last.total);
    }

    #[test]
    fn frozen_stages_stay_fixed() {
        let det = Detector::new(&tiny_config()).unwrap();
        let mut store = det.init_params::<f32>(0).unwrap();
        freeze_stages(&mut store, det.backbone.kind(), 2).unwrap();
        let before = store.clone();
        let mut state = AdamState::new();
        for i in 0..100 {
            let lb = train_step(&det, &mut store, &mut state, &[sample(i)], 1e-3, &AdamConfig::default(), Exec::Sequential).unwrap();
            assert!(lb.total > 0.0);
        }
        let mut changed = 0;
        for ((name, p), (_, q)) in store.iter().zip(before.iter()) {
            if p.frozen {
                assert_eq!(p.tensor, q.tensor, "{name}");
            } else if p.tensor != q.tensor {
                changed += 1;
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn end_to_end_gradient_check() {
        let det = Detector::new(&tiny_config()).unwrap();
        let s = sample::<f64>(9);
        for seed in 0..3 {
            // move off the exact relu kinks created by zero-initialised shifts
            let mut store = det.init_params::<f64>(seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for (_, p) in store.iter_mut() {
                let noise = Tensor::<f64>::randn(p.tensor.shape(), 0.05, &mut rng);
                for (v, n) in p.tensor.data_mut().iter_mut().zip(noise.data()) {
                    *v += n;
                }
            }
            let opts = GradCheckOptions { coords_per_param: 3, seed, ..GradCheckOptions::for_precision::<f64>() };
            let r = grad_check_report(|g, st| det.loss(g, st, &s).map(|(r, _)| r), &store, opts).unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }
}
