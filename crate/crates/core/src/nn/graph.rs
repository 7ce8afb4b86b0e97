//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every primitive applied during a forward pass. Nodes are
//! appended in evaluation order, so walking them backwards is a valid
//! topological order for gradient propagation.

use std::collections::HashMap;

use super::ops::{self, Activation, ConvSpec, PoolKind};
use super::params::Grads;
use super::{ParamStore, Real, Shape, Tensor};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Input,
    Param,
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: NodeId, shift: NodeId },
    ScaleChannels { x: NodeId, gate: NodeId },
    Act { x: NodeId, kind: Activation },
    Pool { x: NodeId, kind: PoolKind, k: usize, stride: usize, argmax: Vec<usize> },
    Upsample { x: NodeId, factor: usize },
    Sum(NodeId),
    GlobalAvg(NodeId),
    Gather { inputs: Vec<NodeId>, per_cell: usize },
    /// Scalar loss whose input gradient was computed alongside its value.
    Loss { x: NodeId, grad: Vec<T> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward (and optionally backward) pass.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, NodeId>,
    grad_enabled: bool,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Graph<T> {
    /// Graph that records gradients for unfrozen parameters.
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// Inference graph: nothing requires gradients.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new(), grad_enabled, grads: Vec::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad: requires_grad && self.grad_enabled });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.rg(id)
    }

    /// Constant input (never differentiated).
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input, false)
    }

    /// Leaf bound to a named parameter; repeated lookups share one node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let p = store.get(name)?;
        let mut value = p.tensor.clone();
        value.grad = None;
        let trainable = !p.frozen;
        value.requires_grad = trainable && self.grad_enabled;
        let id = self.push(value, Op::Param, trainable);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, spec }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        ops::same_shape(self.value(a), self.value(b), "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        out.check_finite("add")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        ops::same_shape(self.value(a), self.value(b), "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        out.check_finite("mul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn affine(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let out = ops::channel_affine(self.value(x), self.value(scale), self.value(shift))?;
        out.check_finite("channel affine")?;
        let rg = self.rg(x) || self.rg(scale) || self.rg(shift);
        Ok(self.push(out, Op::Affine { x, scale, shift }, rg))
    }

    pub fn scale_channels(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let out = ops::scale_channels(self.value(x), self.value(gate))?;
        out.check_finite("channel gate")?;
        let rg = self.rg(x) || self.rg(gate);
        Ok(self.push(out, Op::ScaleChannels { x, gate }, rg))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let out = ops::activation(self.value(x), kind);
        let rg = self.rg(x);
        self.push(out, Op::Act { x, kind }, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn pool2d(&mut self, x: NodeId, kind: PoolKind, k: usize, stride: usize) -> Result<NodeId> {
        let (out, argmax) = ops::pool2d(self.value(x), kind, k, stride)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Pool { x, kind, k, stride, argmax }, rg))
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let out = ops::upsample_nearest(self.value(x), factor)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample { x, factor }, rg))
    }

    /// Sum of all elements as a 1x1x1x1 tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::scalar(self.value(x).sum());
        out.check_finite("sum")?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    /// Mean over each `(h, w)` plane, giving `n x c x 1 x 1`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let plane = s.plane();
        if plane == 0 {
            return Err(config_err!("global pooling over empty plane {s}"));
        }
        let inv = T::one() / T::lit(plane as f64);
        let data = self.value(x).data().chunks(plane).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvg(x), rg))
    }

    /// Flattens dense per-cell predictions into an anchor-major table.
    ///
    /// Every input is `n x (per_cell*depth) x h x w`, where channel
    /// `a*depth + d` holds component `d` of the `a`-th anchor of a cell. The
    /// result is `n x 1 x anchors x depth`, anchors ordered input-major, then
    /// row-major over cells, then by `a`.
    pub fn gather_anchors(&mut self, inputs: &[NodeId], per_cell: usize) -> Result<NodeId> {
        let first = self.shape(*inputs.first().ok_or_else(|| config_err!("gather_anchors needs at least one input"))?);
        if per_cell == 0 || first.c() % per_cell != 0 {
            return Err(config_err!("channels {} not divisible by {per_cell} anchors per cell", first.c()));
        }
        let depth = first.c() / per_cell;
        let n = first.n();
        let mut total = 0;
        for &id in inputs {
            let s = self.shape(id);
            if s.n() != n || s.c() != first.c() {
                return Err(config_err!("gather_anchors input {s} incompatible with {first}"));
            }
            total += s.plane() * per_cell;
        }
        let mut out = vec![T::zero(); n * total * depth];
        for b in 0..n {
            let mut anchor = 0;
            for &id in inputs {
                let t = self.value(id);
                let s = t.shape();
                let plane = s.plane();
                let src = &t.data()[b * s.c() * plane..][..s.c() * plane];
                for cell in 0..plane {
                    for a in 0..per_cell {
                        for d in 0..depth {
                            out[(b * total + anchor) * depth + d] = src[(a * depth + d) * plane + cell];
                        }
                        anchor += 1;
                    }
                }
            }
        }
        let rg = inputs.iter().any(|&i| self.rg(i));
        let out = Tensor::from_vec(Shape::new(n, 1, total, depth), out)?;
        Ok(self.push(out, Op::Gather { inputs: inputs.to_vec(), per_cell }, rg))
    }

    /// Records a scalar loss given its value and gradient with respect to `x`.
    pub fn scalar_loss(&mut self, x: NodeId, value: T, grad: Vec<T>) -> Result<NodeId> {
        if grad.len() != self.value(x).numel() {
            return Err(config_err!("loss gradient length {} != input size {}", grad.len(), self.value(x).numel()));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(value), Op::Loss { x, grad }, rg))
    }

    /// Back-propagates from the scalar node `root`. Gradients of every node
    /// that requires them become available through [`Graph::grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(config_err!("backward root must be scalar, got {}", self.shape(root)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let gt = Tensor::from_vec(self.nodes[i].value.shape(), g)?;
            let node = &self.nodes[i];
            let mut contrib: Vec<(NodeId, Vec<T>)> = Vec::new();
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Conv { x, w, b, spec } => {
                    let need_x = self.rg(*x);
                    let (gx, gw, gb) = ops::conv2d_backward(self.value(*x), self.value(*w), &gt, *spec, need_x);
                    if let Some(gx) = gx {
                        contrib.push((*x, gx));
                    }
                    contrib.push((*w, gw));
                    if let Some(b) = b {
                        contrib.push((*b, gb));
                    }
                }
                Op::Add(a, b) => {
                    contrib.push((*a, gt.data().to_vec()));
                    contrib.push((*b, gt.data().to_vec()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    contrib.push((*a, gt.data().iter().zip(vb).map(|(&g, &v)| g * v).collect()));
                    contrib.push((*b, gt.data().iter().zip(va).map(|(&g, &v)| g * v).collect()));
                }
                Op::Affine { x, scale, shift } => {
                    let s = self.shape(*x);
                    let plane = s.plane();
                    let xv = self.value(*x).data();
                    let sc = self.value(*scale).data();
                    let mut gx = vec![T::zero(); s.numel()];
                    let mut gs = vec![T::zero(); s.c()];
                    let mut gb = vec![T::zero(); s.c()];
                    for (p, (gchunk, xchunk)) in gt.data().chunks(plane).zip(xv.chunks(plane)).enumerate() {
                        let c = p % s.c();
                        let mut acc_s = T::zero();
                        let mut acc_b = T::zero();
                        for (j, (&g, &xx)) in gchunk.iter().zip(xchunk).enumerate() {
                            gx[p * plane + j] = g * sc[c];
                            acc_s = acc_s + g * xx;
                            acc_b = acc_b + g;
                        }
                        gs[c] = gs[c] + acc_s;
                        gb[c] = gb[c] + acc_b;
                    }
                    contrib.push((*x, gx));
                    contrib.push((*scale, gs));
                    contrib.push((*shift, gb));
                }
                Op::ScaleChannels { x, gate } => {
                    let s = self.shape(*x);
                    let plane = s.plane();
                    let xv = self.value(*x).data();
                    let gv = self.value(*gate).data();
                    let mut gx = vec![T::zero(); s.numel()];
                    let mut gg = vec![T::zero(); gv.len()];
                    for (p, (gchunk, xchunk)) in gt.data().chunks(plane).zip(xv.chunks(plane)).enumerate() {
                        let mut acc = T::zero();
                        for (j, (&g, &xx)) in gchunk.iter().zip(xchunk).enumerate() {
                            gx[p * plane + j] = g * gv[p];
                            acc = acc + g * xx;
                        }
                        gg[p] = acc;
                    }
                    contrib.push((*x, gx));
                    contrib.push((*gate, gg));
                }
                Op::Act { x, kind } => {
                    contrib.push((*x, ops::activation_backward(&node.value, &gt, *kind)));
                }
                Op::Pool { x, kind, k, stride, argmax } => {
                    contrib.push((*x, ops::pool2d_backward(self.shape(*x), &gt, *kind, *k, *stride, argmax)));
                }
                Op::Upsample { x, factor } => {
                    contrib.push((*x, ops::upsample_nearest_backward(self.shape(*x), &gt, *factor)));
                }
                Op::Sum(x) => {
                    contrib.push((*x, vec![gt.data()[0]; self.value(*x).numel()]));
                }
                Op::GlobalAvg(x) => {
                    let s = self.shape(*x);
                    let inv = T::one() / T::lit(s.plane() as f64);
                    let mut gx = Vec::with_capacity(s.numel());
                    for &g in gt.data() {
                        gx.extend(std::iter::repeat(g * inv).take(s.plane()));
                    }
                    contrib.push((*x, gx));
                }
                Op::Gather { inputs, per_cell } => {
                    let os = gt.shape();
                    let (n, total, depth) = (os.n(), os.h(), os.w());
                    let mut per_input: Vec<Vec<T>> = inputs.iter().map(|&id| vec![T::zero(); self.value(id).numel()]).collect();
                    for b in 0..n {
                        let mut anchor = 0;
                        for (slot, &id) in inputs.iter().enumerate() {
                            let s = self.shape(id);
                            let plane = s.plane();
                            let dst = &mut per_input[slot][b * s.c() * plane..][..s.c() * plane];
                            for cell in 0..plane {
                                for a in 0..*per_cell {
                                    for d in 0..depth {
                                        dst[(a * depth + d) * plane + cell] = gt.data()[(b * total + anchor) * depth + d];
                                    }
                                    anchor += 1;
                                }
                            }
                        }
                    }
                    contrib.extend(inputs.iter().copied().zip(per_input));
                }
                Op::Loss { x, grad } => {
                    let up = gt.data()[0];
                    contrib.push((*x, grad.iter().map(|&g| g * up).collect()));
                }
            }
            for (id, g) in contrib {
                if !self.rg(id) {
                    continue;
                }
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a = *a + *v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            // leaves keep their gradient
            if matches!(self.nodes[i].op, Op::Param | Op::Input) {
                grads[i] = Some(gt.into_data());
            }
        }
        self.grads = grads;
        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last backward root with respect to `id`, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every trainable parameter touched by the last backward pass.
    pub fn param_grads(&self) -> Grads<T> {
        let mut out = Grads::new();
        for (name, &id) in &self.params {
            if let Some(g) = self.grad(id) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}
