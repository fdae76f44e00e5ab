//! Value-wise arithmetic and reductions.

use super::{numel, Graph, Op, Result, TensorError, TensorId};
use crate::scalar::Scalar;

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    RightScalar,
    LeftScalar,
}

impl Broadcast {
    #[inline]
    fn left(self, i: usize) -> usize {
        match self {
            Broadcast::LeftScalar => 0,
            _ => i,
        }
    }

    #[inline]
    fn right(self, i: usize) -> usize {
        match self {
            Broadcast::RightScalar => 0,
            _ => i,
        }
    }
}

impl<T: Scalar> Graph<T> {
    fn broadcast(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<(Broadcast, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok((Broadcast::Same, sa.to_vec()))
        } else if numel(sb) == 1 {
            Ok((Broadcast::RightScalar, sa.to_vec()))
        } else if numel(sa) == 1 {
            Ok((Broadcast::LeftScalar, sb.to_vec()))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<TensorId> {
        let (mode, shape) = self.broadcast(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let value = (0..numel(&shape))
            .map(|i| f(va[mode.left(i)], vb[mode.right(i)]))
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(shape, value, rg, op))
    }

    fn unary(&mut self, a: TensorId, op: Op<T>, f: impl Fn(T) -> T) -> TensorId {
        let node = self.node(a);
        let shape = node.shape.clone();
        let value = node.value.iter().map(|&x| f(x)).collect();
        let rg = node.requires_grad;
        self.push(shape, value, rg, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: TensorId, c: T) -> TensorId {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: TensorId, c: T) -> TensorId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// `c - a`, value-wise.
    pub fn rsub_scalar(&mut self, c: T, a: TensorId) -> TensorId {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, c)
    }

    pub fn square(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let node = self.node(a);
        let s = node.value.iter().copied().sum();
        let rg = node.requires_grad;
        self.push(vec![1], vec![s], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let node = self.node(a);
        let n = T::of(node.value.len() as f64);
        let s: T = node.value.iter().copied().sum();
        let rg = node.requires_grad;
        self.push(vec![1], vec![s / n], rg, Op::Mean(a))
    }

    /// Mean over every axis but the first: `[N, ...] -> [N]`.
    pub fn mean_per_sample(&mut self, a: TensorId) -> TensorId {
        let node = self.node(a);
        let n = node.shape[0];
        let per = node.value.len() / n;
        let inv = T::of(per as f64);
        let value = node
            .value
            .chunks(per)
            .map(|c| c.iter().copied().sum::<T>() / inv)
            .collect();
        let rg = node.requires_grad;
        self.push(vec![n], value, rg, Op::MeanPerSample(a))
    }
}

/// Gradients of a binary value-wise op with respect to each operand.
pub(super) fn binary_backward<T: Scalar>(
    op: &Op<T>,
    va: &[T],
    vb: &[T],
    out: &[T],
    upstream: &[T],
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let n = out.len();
    let mode = if va.len() == vb.len() {
        Broadcast::Same
    } else if vb.len() == 1 {
        Broadcast::RightScalar
    } else {
        Broadcast::LeftScalar
    };
    let mut ga = want_a.then(|| vec![T::zero(); va.len()]);
    let mut gb = want_b.then(|| vec![T::zero(); vb.len()]);
    for i in 0..n {
        let (ia, ib) = (mode.left(i), mode.right(i));
        let (a, b, g) = (va[ia], vb[ib], upstream[i]);
        let (da, db) = match op {
            Op::Add(..) => (g, g),
            Op::Sub(..) => (g, -g),
            Op::Mul(..) => (g * b, g * a),
            Op::Div(..) => (g / b, -g * a / (b * b)),
            _ => unreachable!("not a binary op"),
        };
        if let Some(ga) = ga.as_mut() {
            ga[ia] += da;
        }
        if let Some(gb) = gb.as_mut() {
            gb[ib] += db;
        }
    }
    (ga, gb)
}
