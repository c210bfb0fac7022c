//! Channel shuffle: view channels as `(groups, C / groups)`, transpose, flatten.

use alloc::vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Source channel of output position `p`.
#[inline]
pub fn shuffle_source(p: usize, channels: usize, groups: usize) -> usize {
    (p % groups) * (channels / groups) + p / groups
}

pub fn channel_shuffle_forward<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        bail!(Spec, "{c} channels cannot be shuffled in {groups} groups");
    }
    Ok(permute(x, n, c, h * w, groups))
}

fn permute<T: Scalar>(x: &Tensor<T>, n: usize, c: usize, plane: usize, groups: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for p in 0..c {
            let src = (s * c + shuffle_source(p, c, groups)) * plane;
            let dst = (s * c + p) * plane;
            out[dst..dst + plane].copy_from_slice(&x.data()[src..src + plane]);
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// The transpose of the `(g, C/g)` view is the `(C/g, g)` shuffle.
pub(crate) fn channel_shuffle_backward<T: Scalar>(grad: &Tensor<T>, groups: usize) -> Tensor<T> {
    let (n, c, h, w) = grad.dims4().expect("rank 4");
    permute(grad, n, c, h * w, c / groups)
}

impl<T: Scalar> Graph<T> {
    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let out = channel_shuffle_forward(self.value(x), groups)?;
        Ok(self.push(out, Op::Shuffle { x, groups }))
    }
}
