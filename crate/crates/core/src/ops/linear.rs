//! Fully connected layer over `[N, Cin]` inputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

/// `v · wᵀ + b` with `v: [N, Cin]`, `w: [Cout, Cin]`, `b: [Cout]`.
pub fn linear_forward<T: Scalar>(v: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (&[n, cin], &[cout, wcin]) = (v.shape(), w.shape()) else {
        bail!(Shape, "linear expects [N, Cin] x [Cout, Cin], got {:?} x {:?}", v.shape(), w.shape());
    };
    if cin != wcin {
        bail!(Shape, "linear input has {cin} features, weight expects {wcin}");
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            bail!(Shape, "linear bias {:?} != [{cout}]", b.shape());
        }
    }
    let mut out = vec![T::zero(); n * cout];
    for s in 0..n {
        let row = &v.data()[s * cin..(s + 1) * cin];
        for o in 0..cout {
            let wr = &w.data()[o * cin..(o + 1) * cin];
            let dot = row.iter().zip(wr).fold(T::zero(), |a, (&x, &y)| a + x * y);
            out[s * cout + o] = dot + b.map_or(T::zero(), |b| b.data()[o]);
        }
    }
    Ok(Tensor::from_parts(vec![n, cout], out))
}

pub(crate) fn linear_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    grad: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let (xv, wv) = (g.value(x), g.value(w));
    let (n, cin) = (xv.shape()[0], xv.shape()[1]);
    let cout = wv.shape()[0];
    let gs = grad.data();
    let mut out = Vec::with_capacity(3);
    if g.requires_grad(x) {
        let mut dx = vec![T::zero(); n * cin];
        for s in 0..n {
            for o in 0..cout {
                let go = gs[s * cout + o];
                for (d, &wv) in dx[s * cin..(s + 1) * cin].iter_mut().zip(&wv.data()[o * cin..(o + 1) * cin]) {
                    *d += go * wv;
                }
            }
        }
        out.push((x, Tensor::from_parts(vec![n, cin], dx)));
    }
    if g.requires_grad(w) {
        let mut dw = vec![T::zero(); cout * cin];
        for s in 0..n {
            for o in 0..cout {
                let go = gs[s * cout + o];
                for (d, &xv) in dw[o * cin..(o + 1) * cin].iter_mut().zip(&xv.data()[s * cin..(s + 1) * cin]) {
                    *d += go * xv;
                }
            }
        }
        out.push((w, Tensor::from_parts(vec![cout, cin], dw)));
    }
    if let Some(b) = b {
        if g.requires_grad(b) {
            let mut db = vec![T::zero(); cout];
            for s in 0..n {
                for (d, &go) in db.iter_mut().zip(&gs[s * cout..(s + 1) * cout]) {
                    *d += go;
                }
            }
            out.push((b, Tensor::from_parts(vec![cout], db)));
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }
}
