use rand::Rng;

use crate::error::Result;
use crate::nn::{Activation, ConvSpec, Graph, NodeId, ParamStore, Real, Shape, Tensor};

/// Convolution followed by an optional per-channel affine and activation.
///
/// The affine (`scale`, `shift`) stands in for normalisation: it is trained
/// like any other parameter and folded into the convolution weights when the
/// graph does not record gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub affine: bool,
    pub bias: bool,
    pub act: Option<Activation>,
    /// Fixed init std; He init when `None`.
    pub init_std: Option<f64>,
}

impl ConvUnit {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvUnit {
            name: name.into(),
            c_in,
            c_out,
            kernel,
            stride: 1,
            groups: 1,
            affine: true,
            bias: false,
            act: Some(Activation::Relu),
            init_std: None,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn act(mut self, act: Option<Activation>) -> Self {
        self.act = act;
        self
    }

    /// Plain biased convolution without the affine.
    pub fn plain(mut self) -> Self {
        self.affine = false;
        self.bias = true;
        self
    }

    pub fn init_std(mut self, std: f64) -> Self {
        self.init_std = Some(std);
        self
    }

    pub fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.stride, self.kernel / 2, self.groups)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.c_out, self.c_in / self.groups, self.kernel, self.kernel)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let fan_in = (self.c_in / self.groups) * self.kernel * self.kernel;
        let std = self.init_std.unwrap_or_else(|| (2.0 / fan_in as f64).sqrt());
        store.insert(self.weight_name(), Tensor::randn(self.weight_shape(), std, rng))?;
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros(Shape::new(1, 1, 1, self.c_out)))?;
        }
        if self.affine {
            store.insert(format!("{}.scale", self.name), Tensor::full(Shape::new(1, 1, 1, self.c_out), T::one()))?;
            store.insert(format!("{}.shift", self.name), Tensor::zeros(Shape::new(1, 1, 1, self.c_out)))?;
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let y = if self.affine && !g.grad_enabled() {
            let (w, b) = self.folded(store)?;
            let w = g.input(w);
            let b = g.input(b);
            g.conv2d(x, w, Some(b), self.spec())?
        } else {
            let w = g.param(store, &self.weight_name())?;
            let b = if self.bias { Some(g.param(store, &self.bias_name())?) } else { None };
            let y = g.conv2d(x, w, b, self.spec())?;
            if self.affine {
                let scale = g.param(store, &format!("{}.scale", self.name))?;
                let shift = g.param(store, &format!("{}.shift", self.name))?;
                g.affine(y, scale, shift)?
            } else {
                y
            }
        };
        Ok(match self.act {
            Some(a) => g.activation(y, a),
            None => y,
        })
    }

    /// Weight and bias with the affine folded in: `w' = w*scale`, `b' = b*scale + shift`.
    pub fn folded<T: Real>(&self, store: &ParamStore<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut w = store.tensor(&self.weight_name())?.clone();
        let scale = store.tensor(&format!("{}.scale", self.name))?.data().to_vec();
        let shift = store.tensor(&format!("{}.shift", self.name))?.data().to_vec();
        let per_out = w.numel() / self.c_out;
        for (co, chunk) in w.data_mut().chunks_mut(per_out).enumerate() {
            for v in chunk {
                *v = *v * scale[co];
            }
        }
        let mut b = shift;
        if self.bias {
            for (co, (bv, &orig)) in b.iter_mut().zip(store.tensor(&self.bias_name())?.data()).enumerate() {
                *bv = *bv + orig * scale[co];
            }
        }
        w.grad = None;
        w.requires_grad = false;
        Ok((w, Tensor::from_vec(Shape::new(1, 1, 1, self.c_out), b)?))
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.bias { self.c_out } else { 0 } + if self.affine { 2 * self.c_out } else { 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn folded_inference_matches_training_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let unit = ConvUnit::new("u", 4, 6, 3).stride(2);
        let mut store = ParamStore::<f64>::new();
        unit.init(&mut store, &mut rng).unwrap();
        // non-trivial affine
        *store.get_mut("u.scale").unwrap() = crate::nn::Param { tensor: Tensor::uniform(Shape::new(1, 1, 1, 6), 0.5, 1.5, &mut rng), frozen: false };
        *store.get_mut("u.shift").unwrap() = crate::nn::Param { tensor: Tensor::uniform(Shape::new(1, 1, 1, 6), -0.5, 0.5, &mut rng), frozen: false };
        let x = Tensor::randn(Shape::new(1, 4, 8, 8), 1.0, &mut rng);

        let mut train = Graph::new();
        let xi = train.input(x.clone());
        let a = unit.forward(&mut train, &store, xi).unwrap();
        let mut inf = Graph::inference();
        let xi = inf.input(x);
        let b = unit.forward(&mut inf, &store, xi).unwrap();
        assert!(train.value(a).max_abs_diff(inf.value(b)) < 1e-12);
    }

    #[test]
    fn param_count_matches_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for unit in [ConvUnit::new("a", 8, 8, 3).groups(8), ConvUnit::new("b", 3, 5, 1).plain()] {
            let mut store = ParamStore::<f32>::new();
            unit.init(&mut store, &mut rng).unwrap();
            assert_eq!(store.count(false), unit.param_count());
        }
    }
}
