//! PReLU and channel softmax.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::ops::norm::channel_layout;
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const PRELU_INIT: f64 = 0.25;

/// Per-channel negative slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct PReluState<T> {
    pub alpha: Vec<T>,
}

impl<T: Scalar> PReluState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            alpha: vec![T::of(PRELU_INIT); channels],
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_parts(vec![self.alpha.len()], self.alpha.clone())
    }
}

pub fn prelu_forward<T: Scalar>(x: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, plane) = channel_layout(x.shape())?;
    if alpha.shape() != [c] {
        bail!(Shape, "prelu over {c} channels got alpha {:?}", alpha.shape());
    }
    let mut out = x.data().to_vec();
    for s in 0..n {
        for ch in 0..c {
            let a = alpha.data()[ch];
            for v in &mut out[(s * c + ch) * plane..][..plane] {
                if *v < T::zero() {
                    *v = a * *v;
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub(crate) fn prelu_backward<T: Scalar>(g: &Graph<T>, x: Var, alpha: Var, grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let xv = g.value(x);
    let av = g.value(alpha).data();
    let (n, c, plane) = channel_layout(xv.shape()).expect("validated");
    let mut dx = vec![T::zero(); xv.len()];
    let mut da = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                let (v, dy) = (xv.data()[i], grad.data()[i]);
                // slope 1 at exactly zero
                if v < T::zero() {
                    dx[i] = av[ch] * dy;
                    da[ch] += v * dy;
                } else {
                    dx[i] = dy;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(2);
    if g.requires_grad(x) {
        out.push((x, Tensor::from_parts(xv.shape().to_vec(), dx)));
    }
    if g.requires_grad(alpha) {
        out.push((alpha, Tensor::from_parts(vec![c], da)));
    }
    out
}

/// Softmax over the channel axis of `[N, C]` or `[N, C, 1, 1]`.
pub fn softmax_channels_forward<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, plane) = channel_layout(v.shape())?;
    if plane != 1 {
        bail!(Shape, "channel softmax expects 1x1 spatial dims, got {:?}", v.shape());
    }
    let mut out = vec![T::zero(); v.len()];
    for s in 0..n {
        let row = &v.data()[s * c..(s + 1) * c];
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let dst = &mut out[s * c..(s + 1) * c];
        let mut total = T::zero();
        for (o, &x) in dst.iter_mut().zip(row) {
            *o = (x - max).exp();
            total += *o;
        }
        for o in dst.iter_mut() {
            *o /= total;
        }
    }
    Ok(Tensor::from_parts(v.shape().to_vec(), out))
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, _) = channel_layout(y.shape()).expect("validated");
    let mut dx = vec![T::zero(); y.len()];
    for s in 0..n {
        let ys = &y.data()[s * c..(s + 1) * c];
        let gs = &grad.data()[s * c..(s + 1) * c];
        let dot = ys.iter().zip(gs).fold(T::zero(), |a, (&yv, &gv)| a + yv * gv);
        for ((d, &yv), &gv) in dx[s * c..(s + 1) * c].iter_mut().zip(ys).zip(gs) {
            *d = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

impl<T: Scalar> Graph<T> {
    /// `x` where `x >= 0`, `alpha_c · x` otherwise.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let out = prelu_forward(self.value(x), self.value(alpha))?;
        Ok(self.push(out, Op::Prelu { x, alpha }))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = softmax_channels_forward(self.value(x))?;
        Ok(self.push(out, Op::Softmax { x }))
    }
}
