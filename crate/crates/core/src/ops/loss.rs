//! Pixel-wise cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Label value excluded from the loss and from confusion statistics.
pub const IGNORE_INDEX: u8 = 255;

pub(crate) struct CeForward<T> {
    pub loss: T,
    pub probs: Vec<T>,
    pub targets: Vec<Option<usize>>,
    pub valid: usize,
}

/// Mean over non-ignored pixels of `−log softmax(logits)[label]`; zero when
/// every pixel is ignored.
pub(crate) fn cross_entropy_forward<T: Scalar>(logits: &Tensor<T>, labels: &[u8], ignore_index: u8) -> Result<CeForward<T>> {
    let (n, k, h, w) = logits.dims4()?;
    let plane = h * w;
    if labels.len() != n * plane {
        bail!(Shape, "label map has {} entries, logits {:?} need {}", labels.len(), logits.shape(), n * plane);
    }
    let xs = logits.data();
    let mut probs = vec![T::zero(); xs.len()];
    let mut targets = Vec::with_capacity(labels.len());
    let mut total = T::zero();
    let mut valid = 0;
    for s in 0..n {
        for p in 0..plane {
            let label = labels[s * plane + p];
            let target = if label == ignore_index {
                None
            } else if (label as usize) < k {
                Some(label as usize)
            } else {
                bail!(Data, "label {label} outside [0, {k}) at sample {s}, pixel {p}");
            };
            let at = |c: usize| (s * k + c) * plane + p;
            let max = (0..k).fold(T::neg_infinity(), |m, c| m.max(xs[at(c)]));
            let mut denom = T::zero();
            for c in 0..k {
                let e = (xs[at(c)] - max).exp();
                probs[at(c)] = e;
                denom += e;
            }
            for c in 0..k {
                probs[at(c)] /= denom;
            }
            if let Some(t) = target {
                total += denom.ln() - (xs[at(t)] - max);
                valid += 1;
            }
            targets.push(target);
        }
    }
    let loss = if valid == 0 {
        T::zero()
    } else {
        total / T::of(valid as f64)
    };
    Ok(CeForward {
        loss,
        probs,
        targets,
        valid,
    })
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    shape: &[usize],
    probs: &[T],
    targets: &[Option<usize>],
    valid: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (n, k, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut out = vec![T::zero(); probs.len()];
    if valid > 0 {
        let scale = grad.data()[0] / T::of(valid as f64);
        for s in 0..n {
            for p in 0..plane {
                let Some(t) = targets[s * plane + p] else {
                    continue;
                };
                for c in 0..k {
                    let i = (s * k + c) * plane + p;
                    let onehot = if c == t { T::one() } else { T::zero() };
                    out[i] = (probs[i] - onehot) * scale;
                }
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

/// Forward-only loss value, for evaluation.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8], ignore_index: u8) -> Result<T> {
    Ok(cross_entropy_forward(logits, labels, ignore_index)?.loss)
}

impl<T: Scalar> Graph<T> {
    /// `logits: [N, K, H, W]`, `labels`: row-major `[N, H, W]` class map.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], ignore_index: u8) -> Result<Var> {
        let f = cross_entropy_forward(self.value(logits), labels, ignore_index)?;
        Ok(self.push(
            Tensor::scalar(f.loss),
            Op::CrossEntropy {
                logits,
                probs: f.probs,
                targets: f.targets,
                valid: f.valid,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::full(&[2, 5, 3, 3], 0.3f64).unwrap();
        let labels: Vec<u8> = (0..18).map(|i| (i % 5) as u8).collect();
        let l = cross_entropy(&logits, &labels, IGNORE_INDEX).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let logits = Tensor::new(&[1, 3, 1, 1], vec![0.0, margin, 0.0]).unwrap();
            let l = cross_entropy(&logits, &[1], IGNORE_INDEX).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn all_ignored_is_zero_with_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::new(&[1, 2, 1, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap());
        let l = g.cross_entropy(x, &[IGNORE_INDEX, IGNORE_INDEX], IGNORE_INDEX).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let logits = Tensor::<f32>::zeros(&[1, 3, 1, 1]).unwrap();
        assert!(matches!(cross_entropy(&logits, &[3], IGNORE_INDEX), Err(crate::Error::Data(_))));
    }
}
