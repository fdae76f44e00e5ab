//! Dense tensors on a reverse-mode differentiation tape.
//!
//! A [`Graph`] owns every tensor created during one forward pass. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and backward is a single reverse sweep. Gradients accumulate across
//! repeated [`Graph::backward`] calls until [`Graph::zero_grad`].

mod ops;

use thiserror::Error;

use crate::scalar::Scalar;

/// Handle to a tensor inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{values} values supplied for shape {shape:?}")]
    ValueCount { shape: Vec<usize>, values: usize },
    #[error("backward needs a single-valued loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Recorded operation of a node; parents are always earlier nodes.
#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, T),
    AddScalar(TensorId),
    Square(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    MeanPerSample(TensorId),
    StopGradient,
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    InstanceNorm {
        x: TensorId,
        scale: TensorId,
        shift: TensorId,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu(TensorId, T),
    Sigmoid(TensorId),
    AvgPool2(TensorId),
    Upsample2(TensorId),
    Concat(TensorId, TensorId),
    SliceChannels {
        x: TensorId,
        start: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Tape of tensors for one forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<TensorId> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                op: "leaf",
                shape: shape.to_vec(),
                reason: "extents must be positive".into(),
            });
        }
        if numel(shape) != values.len() {
            return Err(TensorError::ValueCount {
                shape: shape.to_vec(),
                values: values.len(),
            });
        }
        Ok(self.push(shape.to_vec(), values, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<TensorId> {
        self.leaf(shape, values, false)
    }

    pub fn variable(&mut self, shape: &[usize], values: Vec<T>) -> Result<TensorId> {
        self.leaf(shape, values, true)
    }

    pub fn scalar(&mut self, value: T) -> TensorId {
        self.push(vec![1], vec![value], false, Op::Leaf)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> TensorId {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub(crate) fn node(&self, id: TensorId) -> &Node<T> {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].value
    }

    /// Single value of a one-element tensor.
    pub fn item(&self, id: TensorId) -> T {
        self.nodes[id.0].value[0]
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient, `None` if no backward pass has reached the tensor.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Identity forward, zero contribution backward.
    pub fn stop_gradient(&mut self, x: TensorId) -> TensorId {
        let node = self.node(x);
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.push(shape, value, false, Op::StopGradient)
    }

    /// Propagates d(loss)/d(tensor) to every reachable tensor with `requires_grad`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = pending[idx].take() else {
                continue;
            };
            for (parent, contribution) in self.contributions(TensorId(idx), &upstream) {
                debug_assert!(parent.0 < idx);
                match &mut pending[parent.0] {
                    Some(acc) => add_assign(acc, &contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => add_assign(acc, &upstream),
                slot @ None => *slot = Some(upstream),
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `id` to each differentiable parent.
    fn contributions(&self, id: TensorId, upstream: &[T]) -> Vec<(TensorId, Vec<T>)> {
        use crate::layers::kernels;

        let node = self.node(id);
        let wants = |p: TensorId| self.nodes[p.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let (ga, gb) = ops::binary_backward(
                    &node.op,
                    self.value(a),
                    self.value(b),
                    &node.value,
                    upstream,
                    wants(a),
                    wants(b),
                );
                out.extend(ga.map(|g| (a, g)));
                out.extend(gb.map(|g| (b, g)));
            }
            Op::Scale(a, c) => out.push((*a, upstream.iter().map(|&g| g * *c).collect())),
            Op::AddScalar(a) => out.push((*a, upstream.to_vec())),
            Op::Square(a) => {
                let two = T::of(2.0);
                let g = self
                    .value(*a)
                    .iter()
                    .zip(upstream)
                    .map(|(&x, &g)| two * x * g)
                    .collect();
                out.push((*a, g));
            }
            Op::Sum(a) => out.push((*a, vec![upstream[0]; self.value(*a).len()])),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                out.push((*a, vec![upstream[0] / T::of(n as f64); n]));
            }
            Op::MeanPerSample(a) => {
                let n = self.value(*a).len();
                let per = n / upstream.len();
                let inv = T::one() / T::of(per as f64);
                let g = (0..n).map(|i| upstream[i / per] * inv).collect();
                out.push((*a, g));
            }
            Op::Conv2d { x, w, b } => {
                let grads = kernels::conv2d_backward(
                    self.value(*x),
                    self.shape(*x),
                    self.value(*w),
                    self.shape(*w),
                    upstream,
                    wants(*x),
                    wants(*w) || wants(*b),
                );
                out.extend(grads.x.map(|g| (*x, g)));
                if wants(*w) {
                    out.extend(grads.w.map(|g| (*w, g)));
                }
                if wants(*b) {
                    out.extend(grads.b.map(|g| (*b, g)));
                }
            }
            Op::InstanceNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let grads = kernels::instance_norm_backward(
                    self.shape(*x),
                    self.value(*scale),
                    normalized,
                    inv_std,
                    upstream,
                    wants(*x),
                );
                out.extend(grads.x.map(|g| (*x, g)));
                if wants(*scale) {
                    out.push((*scale, grads.scale));
                }
                if wants(*shift) {
                    out.push((*shift, grads.shift));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let g = self
                    .value(*a)
                    .iter()
                    .zip(upstream)
                    .map(|(&x, &g)| if x >= T::zero() { g } else { g * *slope })
                    .collect();
                out.push((*a, g));
            }
            Op::Sigmoid(a) => {
                let g = node
                    .value
                    .iter()
                    .zip(upstream)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                out.push((*a, g));
            }
            Op::AvgPool2(a) => out.push((*a, kernels::avg_pool2_backward(self.shape(*a), upstream))),
            Op::Upsample2(a) => out.push((*a, kernels::upsample2_backward(self.shape(*a), upstream))),
            Op::Concat(a, b) => {
                let (ga, gb) = kernels::concat_backward(self.shape(*a), self.shape(*b), upstream);
                if wants(*a) {
                    out.push((*a, ga));
                }
                if wants(*b) {
                    out.push((*b, gb));
                }
            }
            Op::SliceChannels { x, start } => {
                let g = kernels::slice_channels_backward(self.shape(*x), *start, &node.shape, upstream);
                out.push((*x, g));
            }
        }
        out.retain(|(p, _)| wants(*p));
        out
    }
}

pub(crate) fn add_assign<T: Scalar>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}
