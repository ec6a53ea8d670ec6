use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid network config: {0}")]
    Config(String),

    #[error("cannot fuse batch norm `{node}`: {msg}")]
    Fusion { node: String, msg: String },

    /// A quantized execution was asked for a node output the spec has no scale for.
    #[error("quantization spec has no scale for `{0}`")]
    MissingScale(String),

    #[error("bad weights magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 8], found: [u8; 8] },

    #[error("shape mismatch for tensor `{name}`: graph expects {expected:?}, stream has {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weights stream truncated while reading {0}")]
    Truncated(&'static str),

    #[error("weights stream: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
