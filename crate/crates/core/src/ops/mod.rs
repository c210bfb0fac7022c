//! Operators. Each submodule holds the raw kernels (plain functions over
//! [`Tensor`](crate::Tensor)s) and the [`Graph`](crate::Graph) methods that
//! record them on the tape.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shuffle;

pub use activation::PReluState;
pub use conv::ConvSpec;
pub use loss::IGNORE_INDEX;
pub use norm::{BatchNormState, Mode};
