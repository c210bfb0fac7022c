//! Element-wise arithmetic, channel concatenation and other shape plumbing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

/// How the second operand of a binary op lines up with the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Same,
    /// `b` is `[nb, C, 1, 1]` against `a = [N, C, H, W]`, `nb` in `{1, N}`.
    Channel { per_sample: bool },
}

fn layout(a: &[usize], b: &[usize]) -> Option<Layout> {
    if a == b {
        return Some(Layout::Same);
    }
    match (a, b) {
        ([n, c, _, _], [nb, cb, 1, 1]) if c == cb && (*nb == 1 || nb == n) => Some(Layout::Channel {
            per_sample: *nb == *n && *n > 1,
        }),
        _ => None,
    }
}

/// Orders operands so the broadcast one (if any) comes second.
fn normalize<T: Scalar>(g: &Graph<T>, a: Var, b: Var) -> Result<(Var, Var, Layout)> {
    if let Some(l) = layout(g.shape(a), g.shape(b)) {
        return Ok((a, b, l));
    }
    if let Some(l) = layout(g.shape(b), g.shape(a)) {
        return Ok((b, a, l));
    }
    bail!(Shape, "incompatible operand shapes {:?} and {:?}", g.shape(a), g.shape(b))
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, l: Layout, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = match l {
        Layout::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Layout::Channel { per_sample } => {
            let (n, c, h, w) = a.dims4().expect("rank 4");
            let plane = h * w;
            let mut out = Vec::with_capacity(a.len());
            for s in 0..n {
                for ch in 0..c {
                    let bv = b.data()[if per_sample { s * c + ch } else { ch }];
                    let base = (s * c + ch) * plane;
                    out.extend(a.data()[base..base + plane].iter().map(|&x| f(x, bv)));
                }
            }
            out
        }
    };
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Sums `full` (shaped like the wide operand) down to the broadcast operand's shape.
fn reduce_to<T: Scalar>(full: &Tensor<T>, l: Layout, target: &[usize]) -> Tensor<T> {
    match l {
        Layout::Same => full.clone(),
        Layout::Channel { per_sample } => {
            let (n, c, h, w) = full.dims4().expect("rank 4");
            let plane = h * w;
            let mut out = vec![T::zero(); target.iter().product()];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    let part = full.data()[base..base + plane]
                        .iter()
                        .fold(T::zero(), |acc, &v| acc + v);
                    out[if per_sample { s * c + ch } else { ch }] += part;
                }
            }
            Tensor::from_parts(target.to_vec(), out)
        }
    }
}

pub(crate) fn add_backward<T: Scalar>(g: &Graph<T>, a: Var, b: Var, grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let l = layout(g.shape(a), g.shape(b)).expect("normalized at record time");
    let mut out = Vec::with_capacity(2);
    if g.requires_grad(a) {
        out.push((a, grad.clone()));
    }
    if g.requires_grad(b) {
        out.push((b, reduce_to(grad, l, g.shape(b))));
    }
    out
}

pub(crate) fn mul_backward<T: Scalar>(g: &Graph<T>, a: Var, b: Var, grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let l = layout(g.shape(a), g.shape(b)).expect("normalized at record time");
    let mut out = Vec::with_capacity(2);
    if g.requires_grad(a) {
        out.push((a, binary(grad, g.value(b), l, |go, bv| go * bv)));
    }
    if g.requires_grad(b) {
        let prod = binary(grad, g.value(a), Layout::Same, |go, av| go * av);
        out.push((b, reduce_to(&prod, l, g.shape(b))));
    }
    out
}

pub(crate) fn concat_backward<T: Scalar>(g: &Graph<T>, parts: &[Var], grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let mut start = 0;
    let mut out = Vec::new();
    for &p in parts {
        let c = g.shape(p)[1];
        if g.requires_grad(p) {
            out.push((p, grad.slice_channels(start, c).expect("in range")));
        }
        start += c;
    }
    out
}

pub(crate) fn slice_backward<T: Scalar>(x: &Tensor<T>, start: usize, grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    let len = grad.shape()[1];
    let plane = h * w;
    let mut out = x.zeros_like();
    for s in 0..n {
        let dst = (s * c + start) * plane;
        let src = s * len * plane;
        out.data_mut()[dst..dst + len * plane].copy_from_slice(&grad.data()[src..src + len * plane]);
    }
    out
}

/// Concatenates NCHW tensors along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        bail!(Shape, "concat of zero tensors");
    };
    let (n, _, h, w) = first.dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            bail!(Shape, "concat part {:?} does not match batch/spatial dims of {:?}", p.shape(), first.shape());
        }
        total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for s in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            let base = s * pc * plane;
            data.extend_from_slice(&p.data()[base..base + pc * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total, h, w], data))
}

impl<T: Scalar> Graph<T> {
    /// Element-wise sum. Either operand may be a `[1|N, C, 1, 1]` channel
    /// vector broadcast over the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, l) = normalize(self, a, b)?;
        let out = binary(self.value(a), self.value(b), l, |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Element-wise product with the same broadcast contract as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, l) = normalize(self, a, b)?;
        let out = binary(self.value(a), self.value(b), l, |x, y| x * y);
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concat_channels(&values)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        Ok(self.push(out, Op::SliceChannels { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_plain() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_zeros_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..24).map(|v| v as f64 * 0.3 - 2.0).collect();
        let a = g.constant(t(&[1, 2, 3, 4], &data));
        let z = g.constant(Tensor::zeros(&[1, 2, 3, 4]).unwrap());
        let c = g.add(a, z).unwrap();
        assert_eq!(g.value(c).data(), &data[..]);
    }

    #[test]
    fn add_channel_broadcast_matches_index_oracle() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let a = g.constant(t(&[1, 2, 2, 2], &data));
        let b = g.constant(t(&[1, 2, 1, 1], &[10.0, 20.0]));
        let c = g.add(a, b).unwrap();
        let out = g.value(c);
        for ch in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let want = data[ch * 4 + y * 2 + x] + [10.0, 20.0][ch];
                    assert_eq!(out.at(&[0, ch, y, x]), want);
                }
            }
        }
    }

    #[test]
    fn broadcast_operand_order_is_normalized() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::new(&[2, 2, 1, 3], (0..12).map(|v| v as f32 * 0.7).collect()).unwrap());
        let b = g.constant(Tensor::new(&[2, 2, 1, 1], vec![1.5, -2.0, 0.25, 3.0]).unwrap());
        let ab = g.mul(a, b).unwrap();
        let ba = g.mul(b, a).unwrap();
        assert_eq!(g.value(ab), g.value(ba));
        let ab = g.add(a, b).unwrap();
        let ba = g.add(b, a).unwrap();
        assert_eq!(g.value(ab), g.value(ba));
    }

    #[test]
    fn mul_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[2.0, 3.0]));
        let b = g.constant(t(&[2], &[4.0, 5.0]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[8.0, 15.0]);
        let ones = g.constant(t(&[2], &[1.0, 1.0]));
        let d = g.mul(a, ones).unwrap();
        assert_eq!(g.value(d).data(), &[2.0, 3.0]);
    }

    #[test]
    fn mul_channel_broadcast_matches_index_oracle() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..16).map(|v| v as f64 - 5.0).collect();
        let a = g.constant(t(&[2, 2, 2, 2], &data));
        let b = g.constant(t(&[2, 2, 1, 1], &[2.0, -1.0, 0.5, 3.0]));
        let c = g.mul(a, b).unwrap();
        let out = g.value(c);
        for n in 0..2 {
            for ch in 0..2 {
                for i in 0..4 {
                    let want = data[(n * 2 + ch) * 4 + i] * [2.0, -1.0, 0.5, 3.0][n * 2 + ch];
                    assert_eq!(out.at(&[n, ch, i / 2, i % 2]), want);
                }
            }
        }
    }

    #[test]
    fn incompatible_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[1, 2, 2, 2]).unwrap());
        let b = g.constant(Tensor::zeros(&[1, 3, 1, 1]).unwrap());
        assert!(matches!(g.add(a, b), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn concat_order_and_errors() {
        let a = t(&[1, 2, 1, 1], &[1.0, 2.0]);
        let b = t(&[1, 2, 1, 1], &[3.0, 4.0]);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 4, 1, 1]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let tall = t(&[1, 1, 2, 1], &[0.0, 0.0]);
        assert!(concat_channels(&[&a, &tall]).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor::<f32>::new(&[2, 3, 2, 2], (0..24).map(|v| v as f32).collect()).unwrap();
        let b = Tensor::<f32>::new(&[2, 1, 2, 2], (0..8).map(|v| -(v as f32)).collect()).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.slice_channels(0, 3).unwrap(), a);
        assert_eq!(c.slice_channels(3, 1).unwrap(), b);
    }
}
