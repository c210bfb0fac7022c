use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `counts[i][j]` = pixels of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Row-major `n×n` counts.
    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_classes * n_classes {
            bail!(Shape, "{n_classes} classes need {} counts, got {}", n_classes * n_classes, counts.len());
        }
        Ok(Self { n: n_classes, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one pixel per position; positions labelled `ignore_index` are skipped.
    pub fn update(&mut self, pred: &[u8], label: &[u8], ignore_index: u8) -> Result<()> {
        if pred.len() != label.len() {
            bail!(Shape, "prediction has {} pixels, label has {}", pred.len(), label.len());
        }
        let n = self.n;
        // validate first so a bad map leaves the matrix untouched
        for (&p, &t) in pred.iter().zip(label) {
            if t != ignore_index && (t as usize >= n || p as usize >= n) {
                bail!(Data, "class out of range for {n} classes: truth {t}, prediction {p}");
            }
        }
        for (&p, &t) in pred.iter().zip(label) {
            if t != ignore_index {
                self.counts[t as usize * n + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n != self.n {
            bail!(Shape, "cannot merge {}-class and {}-class matrices", self.n, other.n);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per class, `None` where the class is absent from both truth and
    /// prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|i| {
                let tp = self.get(i, i);
                let row: u64 = (0..self.n).map(|j| self.get(i, j)).sum();
                let col: u64 = (0..self.n).map(|j| self.get(j, i)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean of the defined per-class IoUs.
    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            bail!(Contract, "mean IoU of an empty confusion matrix");
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Per-pixel argmax over the channel axis of `[N, K, H, W]`, laid out
/// `[N, H, W]`. Ties resolve to the lower class index.
pub fn argmax_channels<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<u8>> {
    let (n, k, h, w) = logits.dims4()?;
    if k > 256 {
        bail!(Shape, "argmax to u8 supports at most 256 classes, got {k}");
    }
    let plane = h * w;
    let d = logits.data();
    let mut out = vec![0u8; n * plane];
    for s in 0..n {
        let base = s * k * plane;
        let mut best: Vec<T> = d[base..base + plane].to_vec();
        let dst = &mut out[s * plane..(s + 1) * plane];
        for c in 1..k {
            let src = &d[base + c * plane..base + (c + 1) * plane];
            for ((b, o), &v) in best.iter_mut().zip(dst.iter_mut()).zip(src) {
                if v > *b {
                    *b = v;
                    *o = c as u8;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_example() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        assert_eq!(cm.miou().unwrap(), 0.6);
    }

    #[test]
    fn perfect_and_disjoint() {
        let cm = ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 2, 0, 0, 0, 9]).unwrap();
        assert_eq!(cm.miou().unwrap(), 1.0);
        let cm = ConfusionMatrix::from_counts(2, vec![0, 4, 6, 0]).unwrap();
        assert_eq!(cm.miou().unwrap(), 0.0);
    }

    #[test]
    fn absent_classes_excluded() {
        let cm = ConfusionMatrix::from_counts(3, vec![2, 0, 0, 0, 0, 0, 0, 0, 2]).unwrap();
        assert_eq!(cm.per_class_iou()[1], None);
        assert_eq!(cm.miou().unwrap(), 1.0);
        assert!(ConfusionMatrix::new(3).miou().is_err());
    }

    #[test]
    fn update_rules() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1], &[255, 255], 255).unwrap();
        assert_eq!(cm.total(), 0);
        cm.update(&[0], &[1], 255).unwrap();
        assert_eq!(cm.get(1, 0), 1);
        assert!(matches!(cm.update(&[0], &[3], 255), Err(crate::Error::Data(_))));
        assert!(matches!(cm.update(&[7], &[0], 255), Err(crate::Error::Data(_))));
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let t = Tensor::new(&[1, 3, 1, 2], vec![1.0f32, 0.0, 1.0, 5.0, 0.5, 5.0]).unwrap();
        assert_eq!(argmax_channels(&t).unwrap(), vec![0, 1]);
    }
}
