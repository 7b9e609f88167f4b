//! Reverse-mode differentiation over a per-step tape.
//!
//! Model code is written against [`Engine`], which has two implementations:
//! [`Graph`] records every op for a later [`Graph::backward`], and [`Eager`]
//! just computes values and drops intermediates as soon as they go out of
//! scope. Both call the same kernels in [`crate::ops`], so their forward
//! values are bit-identical.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Shape, Tensor};

/// Differentiable operations needed by the network.
pub trait Engine<T: Real> {
    type Var: Clone;

    /// Introduces a named trainable parameter.
    fn param(&mut self, name: &str, value: &Tensor<T>) -> Self::Var;
    /// Introduces a value that never receives gradients.
    fn constant(&mut self, value: Tensor<T>) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;

    fn conv2d(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var, pad: usize) -> Result<Self::Var>;
    fn prelu(&mut self, x: &Self::Var, slopes: &Self::Var) -> Result<Self::Var>;
    fn sigmoid(&mut self, x: &Self::Var) -> Self::Var;
    fn tanh(&mut self, x: &Self::Var) -> Self::Var;
    fn global_avg_pool(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn pixel_shuffle(&mut self, x: &Self::Var, r: usize) -> Result<Self::Var>;
    fn concat_channels(&mut self, xs: &[Self::Var]) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn select_channel(&mut self, x: &Self::Var, ch: usize) -> Result<Self::Var>;
}

/// Forward-only engine. Values are reference counted and freed eagerly.
#[derive(Debug, Default)]
pub struct Eager;

impl<T: Real> Engine<T> for Eager {
    type Var = Rc<Tensor<T>>;

    fn param(&mut self, _name: &str, value: &Tensor<T>) -> Self::Var {
        Rc::new(value.clone())
    }

    fn constant(&mut self, value: Tensor<T>) -> Self::Var {
        Rc::new(value)
    }

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var, pad: usize) -> Result<Self::Var> {
        ops::conv2d(x, w, b, pad).map(Rc::new)
    }

    fn prelu(&mut self, x: &Self::Var, slopes: &Self::Var) -> Result<Self::Var> {
        ops::prelu(x, slopes).map(Rc::new)
    }

    fn sigmoid(&mut self, x: &Self::Var) -> Self::Var {
        Rc::new(ops::sigmoid(x))
    }

    fn tanh(&mut self, x: &Self::Var) -> Self::Var {
        Rc::new(ops::tanh(x))
    }

    fn global_avg_pool(&mut self, x: &Self::Var) -> Result<Self::Var> {
        ops::global_avg_pool(x).map(Rc::new)
    }

    fn pixel_shuffle(&mut self, x: &Self::Var, r: usize) -> Result<Self::Var> {
        ops::pixel_shuffle(x, r).map(Rc::new)
    }

    fn concat_channels(&mut self, xs: &[Self::Var]) -> Result<Self::Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|v| v.as_ref()).collect();
        ops::concat_channels(&refs).map(Rc::new)
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        ops::add(a, b).map(Rc::new)
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        ops::mul(a, b).map(Rc::new)
    }

    fn select_channel(&mut self, x: &Self::Var, ch: usize) -> Result<Self::Var> {
        ops::select_channel(x, ch).map(Rc::new)
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: usize, pad: usize },
    Prelu { x: usize, slopes: usize },
    Sigmoid(usize),
    Tanh(usize),
    GlobalAvgPool(usize),
    PixelShuffle { x: usize, r: usize },
    Concat(Vec<usize>),
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Select { x: usize, ch: usize },
    L1 { pred: usize, target: usize },
    Sum(usize),
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    requires_grad: bool,
}

/// A tape of recorded operations. Nodes only reference earlier nodes, so the
/// graph is acyclic and backward is a single reverse sweep.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameters registered through [`Engine::param`], in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn push(&mut self, op: Op, value: Tensor<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Mean absolute error as a scalar node.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::l1_loss(self.val(pred), self.val(target))?;
        let value = Tensor::full(Shape::new(1, 1, 1, 1), loss);
        Ok(self.push(
            Op::L1 {
                pred: pred.0,
                target: target.0,
            },
            value,
            &[pred.0, target.0],
        ))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.val(x).data() {
            acc += v;
        }
        self.push(Op::Sum(x.0), Tensor::full(Shape::new(1, 1, 1, 1), acc), &[x.0])
    }

    /// Hash of which side of every non-differentiable point (PReLU inputs,
    /// L1 residuals) the recorded values lie on. Two evaluations with the
    /// same pattern lie in the same smooth piece of the function.
    pub fn kink_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match node.op {
                Op::Prelu { x, .. } => {
                    for &v in self.nodes[x].value.data() {
                        (v < T::zero()).hash(&mut h);
                    }
                }
                Op::L1 { pred, target } => {
                    let (p, t) = (&self.nodes[pred].value, &self.nodes[target].value);
                    for (&a, &b) in p.data().iter().zip(t.data()) {
                        a.partial_cmp(&b).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Back-propagates from a scalar node. Every `requires_grad` leaf gets a
    /// gradient, zero when it does not reach `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.val(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {}", self.val(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.val(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |i: usize| self.nodes[i].requires_grad;
            let send = |grads: &mut Vec<Option<Tensor<T>>>, i: usize, t: Tensor<T>| {
                if !self.nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(t.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Conv2d { x, w, b, pad } => {
                    let cg = ops::conv2d_backward(&self.nodes[x].value, &self.nodes[w].value, &g, pad, needs(x));
                    if let Some(gx) = cg.input {
                        send(&mut grads, x, gx);
                    }
                    send(&mut grads, w, cg.weight);
                    send(&mut grads, b, cg.bias);
                }
                &Op::Prelu { x, slopes } => {
                    let (gx, gs) = ops::prelu_backward(&self.nodes[x].value, &self.nodes[slopes].value, &g);
                    send(&mut grads, x, gx);
                    send(&mut grads, slopes, gs);
                }
                &Op::Sigmoid(x) => send(&mut grads, x, ops::sigmoid_backward(&node.value, &g)),
                &Op::Tanh(x) => send(&mut grads, x, ops::tanh_backward(&node.value, &g)),
                &Op::GlobalAvgPool(x) => {
                    let s = self.nodes[x].value.shape();
                    send(&mut grads, x, ops::global_avg_pool_backward(s, &g));
                }
                &Op::PixelShuffle { x, r } => {
                    send(&mut grads, x, ops::pixel_unshuffle(&g, r)?);
                }
                Op::Concat(xs) => {
                    let widths: Vec<usize> = xs.iter().map(|&i| self.nodes[i].value.shape().c).collect();
                    for (&i, part) in xs.iter().zip(ops::split_channels(&g, &widths)) {
                        send(&mut grads, i, part);
                    }
                }
                &Op::Add { a, b } => {
                    let kind = ops::broadcast_kind(self.nodes[a].value.shape(), self.nodes[b].value.shape(), "add")?;
                    if needs(b) {
                        send(
                            &mut grads,
                            b,
                            ops::reduce_broadcast(&g, self.nodes[b].value.shape(), kind),
                        );
                    }
                    send(&mut grads, a, g);
                }
                &Op::Mul { a, b } => {
                    let (ga, gb) = ops::mul_backward(&self.nodes[a].value, &self.nodes[b].value, &g);
                    send(&mut grads, a, ga);
                    send(&mut grads, b, gb);
                }
                &Op::Select { x, ch } => {
                    let s = self.nodes[x].value.shape();
                    send(&mut grads, x, ops::select_channel_backward(s, ch, &g));
                }
                &Op::L1 { pred, target } => {
                    let up = g.data()[0];
                    let (p, t) = (&self.nodes[pred].value, &self.nodes[target].value);
                    if needs(pred) {
                        send(&mut grads, pred, ops::l1_backward(p, t, up));
                    }
                    if needs(target) {
                        send(&mut grads, target, ops::l1_backward(t, p, up));
                    }
                }
                &Op::Sum(x) => {
                    let s = self.nodes[x].value.shape();
                    send(&mut grads, x, Tensor::full(s, g.data()[0]));
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Engine<T> for Graph<T> {
    type Var = Var;

    fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        let v = self.leaf(value.clone(), true);
        self.params.push((name.to_string(), v));
        v
    }

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, pad: usize) -> Result<Var> {
        let out = ops::conv2d(self.val(*x), self.val(*w), self.val(*b), pad)?;
        Ok(self.push(
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                pad,
            },
            out,
            &[x.0, w.0, b.0],
        ))
    }

    fn prelu(&mut self, x: &Var, slopes: &Var) -> Result<Var> {
        let out = ops::prelu(self.val(*x), self.val(*slopes))?;
        Ok(self.push(
            Op::Prelu {
                x: x.0,
                slopes: slopes.0,
            },
            out,
            &[x.0, slopes.0],
        ))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let out = ops::sigmoid(self.val(*x));
        self.push(Op::Sigmoid(x.0), out, &[x.0])
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let out = ops::tanh(self.val(*x));
        self.push(Op::Tanh(x.0), out, &[x.0])
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.val(*x))?;
        Ok(self.push(Op::GlobalAvgPool(x.0), out, &[x.0]))
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        let out = ops::pixel_shuffle(self.val(*x), r)?;
        Ok(self.push(Op::PixelShuffle { x: x.0, r }, out, &[x.0]))
    }

    fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|v| self.val(*v)).collect();
        let out = ops::concat_channels(&refs)?;
        let idx: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(Op::Concat(idx.clone()), out, &idx))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::add(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, out, &[a.0, b.0]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::mul(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, out, &[a.0, b.0]))
    }

    fn select_channel(&mut self, x: &Var, ch: usize) -> Result<Var> {
        let out = ops::select_channel(self.val(*x), ch)?;
        Ok(self.push(Op::Select { x: x.0, ch }, out, &[x.0]))
    }
}
