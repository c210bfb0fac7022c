//! Batch normalization over `(N, H, W)` per channel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics and hyper-parameters of one batch-norm layer. The
/// affine `gamma`/`beta` live on the graph as ordinary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::of(BN_EPS),
            momentum: T::of(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// `(batch, channels, elements per channel per sample)` for rank >= 2.
pub(crate) fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        bail!(Shape, "expected a tensor with a channel axis, got {shape:?}");
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

pub(crate) struct BnForward<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<BnForward<T>> {
    let (n, c, plane) = channel_layout(x.shape())?;
    if state.channels() != c || gamma.shape() != [c] || beta.shape() != [c] {
        bail!(
            Shape,
            "batch norm over {c} channels got state for {}, gamma {:?}, beta {:?}",
            state.channels(),
            gamma.shape(),
            beta.shape()
        );
    }
    let count = n * plane;
    let xs = x.data();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sum += xs[base..base + plane].iter().fold(T::zero(), |a, &v| a + v);
                }
                let mean = sum / T::of(count as f64);
                let mut sq = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sq += xs[base..base + plane]
                        .iter()
                        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
                }
                let var = sq / T::of(count as f64);
                let unbiased = if count > 1 {
                    sq / T::of((count - 1) as f64)
                } else {
                    var
                };
                let m = state.momentum;
                state.running_mean[ch] = (T::one() - m) * state.running_mean[ch] + m * mean;
                state.running_var[ch] = (T::one() - m) * state.running_var[ch] + m * unbiased;
                (mean, var)
            }
            Mode::Infer => (state.running_mean[ch], state.running_var[ch]),
        };
        let istd = T::one() / (var + state.eps).sqrt();
        inv_std[ch] = istd;
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for (h, &v) in xhat[base..base + plane].iter_mut().zip(&xs[base..base + plane]) {
                *h = (v - mean) * istd;
            }
        }
    }
    let mut out = vec![T::zero(); xs.len()];
    for s in 0..n {
        for ch in 0..c {
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            let base = (s * c + ch) * plane;
            for (o, &h) in out[base..base + plane].iter_mut().zip(&xhat[base..base + plane]) {
                *o = g * h + b;
            }
        }
    }
    Ok(BnForward {
        out: Tensor::from_parts(x.shape().to_vec(), out),
        xhat,
        inv_std,
    })
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    g: &Graph<T>,
    (x, gamma, beta): (Var, Var, Var),
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    grad: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let (n, c, plane) = channel_layout(grad.shape()).expect("rank >= 2");
    let count = T::of((n * plane) as f64);
    let gs = grad.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for (&dy, &h) in gs[base..base + plane].iter().zip(&xhat[base..base + plane]) {
                dbeta[ch] += dy;
                dgamma[ch] += dy * h;
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if g.requires_grad(x) {
        let gv = g.value(gamma).data();
        let mut dx = vec![T::zero(); gs.len()];
        for ch in 0..c {
            let scale = gv[ch] * inv_std[ch];
            for s in 0..n {
                let base = (s * c + ch) * plane;
                let rows = dx[base..base + plane]
                    .iter_mut()
                    .zip(&gs[base..base + plane])
                    .zip(&xhat[base..base + plane]);
                if batch_stats {
                    for ((d, &dy), &h) in rows {
                        *d = scale / count * (count * dy - dbeta[ch] - h * dgamma[ch]);
                    }
                } else {
                    for ((d, &dy), _) in rows {
                        *d = scale * dy;
                    }
                }
            }
        }
        out.push((x, Tensor::from_parts(grad.shape().to_vec(), dx)));
    }
    if g.requires_grad(gamma) {
        out.push((gamma, Tensor::from_parts(vec![c], dgamma)));
    }
    if g.requires_grad(beta) {
        out.push((beta, Tensor::from_parts(vec![c], dbeta)));
    }
    out
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization followed by the per-channel affine `gamma·x̂ + beta`.
    /// In [`Mode::Train`] the running statistics in `state` are updated.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let f = batch_norm_forward(self.value(x), self.value(gamma), self.value(beta), state, mode)?;
        Ok(self.push(
            f.out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: f.xhat,
                inv_std: f.inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..16).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = g.constant(Tensor::new(&[2, 2, 2, 2], data.clone()).unwrap());
        let gamma = g.constant(Tensor::full(&[2], 1.0).unwrap());
        let beta = g.constant(Tensor::zeros(&[2]).unwrap());
        let mut st = BatchNormState::new(2);
        st.eps = 0.0;
        let y = g.batch_norm(x, gamma, beta, &mut st, Mode::Infer).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
        assert_eq!(st, {
            let mut s = BatchNormState::new(2);
            s.eps = 0.0;
            s
        });
    }

    #[test]
    fn train_normalizes_per_channel() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..48).map(|v| ((v * 37 % 11) as f64) * 1.7 + (v / 12) as f64).collect();
        let x = g.constant(Tensor::new(&[2, 3, 2, 4], data).unwrap());
        let gamma = g.constant(Tensor::full(&[3], 1.0).unwrap());
        let beta = g.constant(Tensor::zeros(&[3]).unwrap());
        let mut st = BatchNormState::new(3);
        let y = g.batch_norm(x, gamma, beta, &mut st, Mode::Train).unwrap();
        let out = g.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|s| (0..8).map(move |i| (s, i)))
                .map(|(s, i)| out.at(&[s, ch, i / 4, i % 4]))
                .collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
        assert!(st.running_var.iter().all(|&v| v >= 0.0));
        assert!(st.running_mean.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 2, 2]).unwrap());
        let gamma = g.constant(Tensor::zeros(&[3]).unwrap());
        let beta = g.constant(Tensor::zeros(&[3]).unwrap());
        let mut st = BatchNormState::new(3);
        assert!(matches!(
            g.batch_norm(x, gamma, beta, &mut st, Mode::Train),
            Err(crate::Error::Shape(_))
        ));
    }
}
