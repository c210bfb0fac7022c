use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::Network;
use crate::error::{bail, Error, Result};
use crate::ops::loss::IGNORE_INDEX;
use crate::ops::norm::Mode;
use crate::tensor::Tensor;
use crate::train::augment::{augment, normalize, AugmentCfg, Sample};
use crate::train::metrics::{argmax_channels, ConfusionMatrix};
use crate::train::optim::{poly_lr, Sgd};

/// Salt separating the augmentation streams from the batch-order stream.
const AUGMENT_SALT: u64 = 0x6175_676d;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainCfg {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iter: usize,
    pub batch: usize,
    pub seed: u64,
    pub augment: AugmentCfg,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            base_lr: 0.005,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            max_iter: 2000,
            batch: 4,
            seed: 0,
            augment: AugmentCfg::default(),
        }
    }
}

impl TrainCfg {
    pub fn validate(&self, output_stride: usize) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.power > 0.0) {
            bail!(Config, "base_lr and power must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            bail!(Config, "momentum must lie in [0, 1) and weight decay be non-negative");
        }
        if self.max_iter == 0 || self.batch == 0 {
            bail!(Config, "max_iter and batch must be at least 1");
        }
        self.augment.validate(output_stride)
    }

    pub fn lr(&self, iter: usize) -> Result<f64> {
        poly_lr(iter, self.max_iter, self.base_lr, self.power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Stacks equally sized samples into `[B, 3, H, W]` and a flat label vector.
pub fn stack_batch(samples: &[Sample]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let Some(first) = samples.first() else {
        bail!(Contract, "cannot stack an empty batch");
    };
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            bail!(Shape, "batch mixes {h}x{w} and {}x{} samples", s.height(), s.width());
        }
        data.extend_from_slice(s.image.data());
        labels.extend_from_slice(&s.label);
    }
    Ok((Tensor::new(&[samples.len(), 3, h, w], data)?, labels))
}

/// Runs `cfg.max_iter` steps of augment → forward → cross-entropy → backward
/// → SGD with the poly schedule. Batches are drawn epoch by epoch from a
/// seeded permutation; every drawn sample gets its own augmentation stream.
pub fn train_loop(
    net: &mut Network<f32>,
    data: &[Sample],
    cfg: &TrainCfg,
    mut progress: impl FnMut(&HistoryRow),
) -> Result<Vec<HistoryRow>> {
    if data.is_empty() {
        bail!(Contract, "training set is empty");
    }
    cfg.validate(net.cfg.output_stride)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut drawn = 0u64;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.max_iter);

    for iter in 0..cfg.max_iter {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUGMENT_SALT);
            rng.set_stream(drawn);
            drawn += 1;
            batch.push(augment(&data[order[cursor]], &cfg.augment, &mut rng)?);
            cursor += 1;
        }
        let (images, labels) = stack_batch(&batch)?;

        let lr = cfg.lr(iter)?;
        let (arch, mut s) = net.session(Mode::Train);
        let x = s.input(images);
        let logits = arch.forward(&mut s, x)?;
        let loss = s.graph.cross_entropy(logits, &labels, IGNORE_INDEX)?;
        let loss_value = s.graph.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Diverged { iter, loss: loss_value });
        }
        let grads = s.graph.backward(loss)?;
        let param_grads = s.param_grads(&grads);
        drop(s);
        sgd.step(&mut net.params, &param_grads, lr)?;

        let row = HistoryRow {
            iter,
            loss: loss_value,
            lr,
        };
        progress(&row);
        history.push(row);
    }
    Ok(history)
}

/// Confusion matrix of inference-mode predictions on mean-subtracted images.
pub fn evaluate(net: &Network<f32>, data: &[Sample], mean: &[f32; 3]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.num_classes());
    for s in data {
        let (h, w) = (s.height(), s.width());
        let image = normalize(&s.image, mean).reshape(&[1, 3, h, w])?;
        let logits = net.infer(&image)?;
        cm.update(&argmax_channels(&logits)?, &s.label, IGNORE_INDEX)?;
    }
    Ok(cm)
}
