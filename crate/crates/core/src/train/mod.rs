//! Training protocol and evaluation: confusion matrix and mean IoU, the poly
//! learning-rate schedule, momentum SGD, augmentation, a synthetic dataset and
//! the training loop.

mod augment;
mod metrics;
mod optim;
mod run;
mod toy;

pub use augment::{augment, hflip, normalize, rescale, rotate, sample_params, AugmentCfg, AugmentParams, Sample};
pub use metrics::{argmax_channels, ConfusionMatrix};
pub use optim::{poly_lr, sgd_update, Sgd};
pub use run::{evaluate, stack_batch, train_loop, HistoryRow, TrainCfg};
pub use toy::{dataset_mean, gen_toy_dataset, gen_toy_sample, class_size, ShapeKind, SizeBand, ToyCfg, ToySample, ToyShape};
