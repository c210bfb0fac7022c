//! Core of the CIFReNet micro-framework.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std` (only `alloc` is required):
//!
//! - [`tensor`] and [`tape`]: dense NCHW tensors and tape-based reverse-mode
//!   differentiation.
//! - [`ops`]: the operator set the network is assembled from (convolutions of
//!   every flavour, batch norm, PReLU, pooling, resampling, channel shuffle,
//!   softmax, linear, cross-entropy).
//! - [`blocks`]: inverted residual stages, the long-skip refinement module,
//!   the dense semantic pyramid block, the multi-scale context module and the
//!   assembled network.
//! - [`cost`]: analytic parameter / multiply-accumulate / receptive-field
//!   accounting.
//! - [`train`]: confusion matrix and mean IoU, poly schedule, momentum SGD,
//!   augmentation, a synthetic toy dataset and the training loop.
//! - [`gradcheck`]: central finite differences and the 64-bit gradient suite.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod blocks;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, Graph, Var};
pub use tensor::Tensor;
