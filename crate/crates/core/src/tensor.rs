//! Dense row-major tensors.
//!
//! Activations are laid out `[batch, channels, height, width]`. There are no
//! views or strides: every operation materializes its output.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        bail!(Shape, "tensor must have rank >= 1");
    }
    if let Some(d) = shape.iter().position(|&d| d == 0) {
        bail!(Shape, "dimension {d} of {shape:?} is zero");
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = checked_len(shape)?;
        if expected != data.len() {
            return Err(Error::Size {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Zero tensor of the same shape; infallible since `self` is valid.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Internal constructor for buffers whose length is already known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major element lookup; panics on rank or bounds mismatch.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of bounds for axis {i} of size {d}");
            off = off * d + ix;
        }
        self.data[off]
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => bail!(Shape, "expected a rank-4 NCHW tensor, got {:?}", self.shape),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = checked_len(shape)?;
        if len != self.data.len() {
            return Err(Error::Size {
                shape: shape.to_vec(),
                expected: len,
                actual: self.data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other`; shapes must be identical.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Channels `[start, start + len)` of an NCHW tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if len == 0 || start + len > c {
            bail!(Shape, "channel slice {start}..{} out of range for {c} channels", start + len);
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Self::from_parts(vec![n, len, h, w], data))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fill() {
        let t = Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::<f32>::new(&[2, 3], (1..=6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.at(&[1, 2]), 6.0);
        assert_eq!(t.at(&[0, 1]), 2.0);
    }

    #[test]
    fn product_mismatch_is_size_error() {
        let err = Tensor::<f32>::new(&[2, 2], vec![1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Size { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(Tensor::<f32>::zeros(&[2, 0]).is_err());
        assert!(Tensor::<f32>::zeros(&[]).is_err());
    }

    #[test]
    fn slice_channels_picks_planes() {
        let t = Tensor::<f32>::new(&[2, 3, 1, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let s = t.slice_channels(1, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 2]);
        assert_eq!(s.data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }
}
