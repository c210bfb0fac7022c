use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file contents; `offset` is the byte where parsing stopped.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Core(#[from] cifrenet_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Self::Format {
            offset: offset as u64,
            msg: msg.into(),
        }
    }
}
