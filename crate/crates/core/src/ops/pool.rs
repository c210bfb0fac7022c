//! Global average pooling and bilinear resampling.

use alloc::vec;
use alloc::vec::Vec;


use num_traits::Float;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let inv = T::one() / T::of(plane as f64);
    let data = (0..n * c)
        .map(|i| x.data()[i * plane..(i + 1) * plane].iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Ok(Tensor::from_parts(vec![n, c, 1, 1], data))
}

pub(crate) fn gap_backward<T: Scalar>(x_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let plane = x_shape[2] * x_shape[3];
    let inv = T::one() / T::of(plane as f64);
    let mut out = Vec::with_capacity(plane * grad.len());
    for &g in grad.data() {
        out.extend(core::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_parts(x_shape.to_vec(), out)
}

/// One output coordinate's two source taps and weights.
#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

/// Half-pixel (align-corners = false) source taps: `src = (dst + 0.5)·in/out − 0.5`,
/// clamped into `[0, in − 1]`.
fn taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = Float::floor(src) as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let l = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: T::of(1.0 - l),
                w1: T::of(l),
            }
        })
        .collect()
}

pub fn bilinear_forward<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        bail!(Shape, "bilinear output size must be positive, got {out_h}x{out_w}");
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for (plane, dst) in out.chunks_exact_mut(out_h * out_w).enumerate() {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for (oy, ty) in ty.iter().enumerate() {
            let r0 = &src[ty.i0 * w..][..w];
            let r1 = &src[ty.i1 * w..][..w];
            for (ox, tx) in tx.iter().enumerate() {
                // lerp form keeps constant planes exact
                let top = r0[tx.i0] + (r0[tx.i1] - r0[tx.i0]) * tx.w1;
                let bot = r1[tx.i0] + (r1[tx.i1] - r1[tx.i0]) * tx.w1;
                dst[oy * out_w + ox] = top + (bot - top) * ty.w1;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], out))
}

pub(crate) fn bilinear_backward<T: Scalar>(x_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (_, _, out_h, out_w) = grad.dims4().expect("rank 4");
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let mut gx = vec![T::zero(); x_shape.iter().product()];
    for (plane, g) in grad.data().chunks_exact(out_h * out_w).enumerate() {
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for (oy, ty) in ty.iter().enumerate() {
            for (ox, tx) in tx.iter().enumerate() {
                let go = g[oy * out_w + ox];
                dst[ty.i0 * w + tx.i0] += ty.w0 * tx.w0 * go;
                dst[ty.i0 * w + tx.i1] += ty.w0 * tx.w1 * go;
                dst[ty.i1 * w + tx.i0] += ty.w1 * tx.w0 * go;
                dst[ty.i1 * w + tx.i1] += ty.w1 * tx.w1 * go;
            }
        }
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

impl<T: Scalar> Graph<T> {
    /// Mean over each H×W plane; output `[N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = global_avg_pool_forward(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool { x }))
    }

    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = bilinear_forward(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Upsample { x }))
    }
}
