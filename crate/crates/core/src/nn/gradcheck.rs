use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Coordinates probed per parameter tensor; smaller tensors are probed exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
    /// Coordinates whose error exceeds this are probed again with a step
    /// 100 times smaller, which keeps a nearby activation kink out of the
    /// difference; the smaller-step error is the one reported.
    pub refine_above: Option<f64>,
}

impl GradCheckOptions {
    pub fn for_precision<T: Real>() -> Self {
        GradCheckOptions { eps: T::GRAD_CHECK_EPS, coords_per_param: 8, seed: 0, refine_above: None }
    }
}

/// Worst coordinate found by [`grad_check_report`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates that needed the smaller step.
    pub refined: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences at `point`.
///
/// `f` must build its scalar output on the graph it is given, reading
/// parameters from the store it is given. Only trainable parameters are
/// probed. Returns the largest `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<T, F>(f: F, point: &ParamStore<T>, opts: GradCheckOptions) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<NodeId>,
{
    grad_check_report(f, point, opts).map(|r| r.max_rel_error)
}

/// [`grad_check`] that also names the worst coordinate.
pub fn grad_check_report<T, F>(f: F, point: &ParamStore<T>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let root = f(&mut g, point)?;
    let loss = g.value(root).item();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("grad_check: loss is {loss}")));
    }
    g.backward(root)?;
    let analytic = g.param_grads();

    // same recording mode as the analytic pass so both evaluate one code path
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        let v = g.value(root).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("grad_check: perturbed loss is {v}")));
        }
        Ok(v.as_f64())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = point.clone();
    let mut worst = GradCheckReport::default();
    let mut refined = 0;
    let names: Vec<String> = point.iter().filter(|(_, p)| !p.frozen).map(|(n, _)| n.to_string()).collect();
    for name in names {
        let numel = point.tensor(&name)?.numel();
        let coords: Vec<usize> = if numel <= opts.coords_per_param {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = point.tensor(&name)?.data()[i];
            let mut central = |step: f64| -> Result<f64> {
                let eps = T::lit(step);
                probe.get_mut(&name)?.tensor.data_mut()[i] = orig + eps;
                let plus = eval(&probe)?;
                probe.get_mut(&name)?.tensor.data_mut()[i] = orig - eps;
                let minus = eval(&probe)?;
                probe.get_mut(&name)?.tensor.data_mut()[i] = orig;
                // use the actually representable step
                Ok((plus - minus) / ((orig + eps).as_f64() - (orig - eps).as_f64()))
            };
            let a = analytic.get(&name).map_or(0.0, |g| g[i].as_f64());
            let rel = |numeric: f64| (a - numeric).abs() / numeric.abs().max(1.0);
            let mut numeric = central(opts.eps)?;
            if opts.refine_above.is_some_and(|t| rel(numeric) > t) {
                numeric = central(opts.eps / 100.0)?;
                refined += 1;
            }
            let err = rel(numeric);
            if err > worst.max_rel_error {
                worst = GradCheckReport { max_rel_error: err, param: name.clone(), index: i, analytic: a, numeric, refined: 0 };
            }
        }
    }
    worst.refined = refined;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Shape, Tensor};

    fn store_with(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.insert("x", Tensor::from_vec(Shape::new(1, 1, 1, n), values).unwrap()).unwrap();
        s
    }

    #[test]
    fn linear_function_is_exact() {
        let store = store_with(vec![0.3, -1.2, 4.0]);
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            g.sum(x)
        };
        let err = grad_check(f, &store, GradCheckOptions::for_precision::<f64>()).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sum_of_squares_closed_form() {
        let store = store_with(vec![1.0, 2.0]);
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let sq = g.mul(x, x)?;
            g.sum(sq)
        };
        let err = grad_check(f, &store, GradCheckOptions::for_precision::<f64>()).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let store = store_with(vec![1.0, 2.0]);
        // claims d/dx = 0 for a function that depends on x
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let v = g.value(x).data().iter().map(|v| v * v).sum();
            g.scalar_loss(x, v, vec![0.0, 0.0])
        };
        let err = grad_check(f, &store, GradCheckOptions::for_precision::<f64>()).unwrap();
        assert!(err >= 0.5, "{err}");
        let opts = GradCheckOptions { refine_above: Some(1e-6), ..GradCheckOptions::for_precision::<f64>() };
        let r = grad_check_report(f, &store, opts).unwrap();
        assert!(r.max_rel_error >= 0.5 && r.refined == 2, "{r:?}");
    }

    #[test]
    fn refinement_steps_inside_a_kink() {
        // the default step straddles the relu kink at 0
        let store = store_with(vec![2e-6, -3.0]);
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let y = g.relu(x);
            g.sum(y)
        };
        let plain = grad_check(f, &store, GradCheckOptions::for_precision::<f64>()).unwrap();
        assert!(plain > 0.1, "{plain}");
        let opts = GradCheckOptions { refine_above: Some(1e-6), ..GradCheckOptions::for_precision::<f64>() };
        let r = grad_check_report(f, &store, opts).unwrap();
        assert!(r.max_rel_error < 1e-9 && r.refined == 1, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_error() {
        let store = store_with(vec![f64::INFINITY]);
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            g.sum(x)
        };
        assert!(matches!(
            grad_check(f, &store, GradCheckOptions::for_precision::<f64>()),
            Err(Error::Numeric(_))
        ));
    }
}
