use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("size mismatch: shape {shape:?} holds {expected} elements, buffer has {actual}")]
    Size {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("residual contract violated: input has {input} channels, branch output has {output}")]
    Residual { input: usize, output: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at iteration {iter}: loss = {loss}")]
    Diverged { iter: usize, loss: f64 },
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
