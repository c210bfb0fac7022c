use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, base: f64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        bail!(Contract, "poly schedule needs 0 <= iter <= max_iter, got {iter} of {max_iter}");
    }
    Ok(base * num_traits::Float::powf(1.0 - iter as f64 / max_iter as f64, power))
}

/// One momentum step on a flat buffer:
/// `v ← μ·v + (g + λ·p)`, `p ← p − lr·v`.
pub fn sgd_update<T: Scalar>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v + (g + wd * *p);
        *p -= lr * *v;
    }
}

/// Momentum SGD over a [`ParamStore`]. Weight decay applies only to
/// parameters whose kind decays (convolution and linear weights).
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (id, g) in grads {
            let p = store.get_mut(*id);
            if g.shape() != p.value.shape() {
                bail!(
                    Shape,
                    "gradient {:?} does not match parameter `{}` {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                );
            }
            let wd = if p.kind.decays() { self.weight_decay } else { 0.0 };
            let v = self.velocity[id.index()].get_or_insert_with(|| g.zeros_like());
            sgd_update(p.value.data_mut(), g.data(), v.data_mut(), lr, self.momentum, wd);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_endpoints() {
        assert_eq!(poly_lr(0, 2000, 0.005, 0.9).unwrap(), 0.005);
        assert_eq!(poly_lr(2000, 2000, 0.005, 0.9).unwrap(), 0.0);
        let mid = poly_lr(1000, 2000, 0.005, 0.9).unwrap();
        assert!((mid - 0.0026794).abs() < 1e-7, "{mid}");
        assert!(poly_lr(2001, 2000, 0.005, 0.9).is_err());
    }

    #[test]
    fn vanilla_step() {
        let mut p = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_update(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, [0.95, -2.1]);
    }

    #[test]
    fn two_momentum_steps() {
        let (lr, mu, g) = (0.1, 0.9, 2.0);
        let mut p = [0.0f64];
        let mut v = [0.0];
        sgd_update(&mut p, &[g], &mut v, lr, mu, 0.0);
        sgd_update(&mut p, &[g], &mut v, lr, mu, 0.0);
        assert!((p[0] + lr * g * (2.0 + mu)).abs() < 1e-12);
    }
}
