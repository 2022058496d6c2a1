use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("layer index {index} out of range for network with {len} layers")]
    LayerOutOfRange { index: usize, len: usize },

    #[error("neuron index {index} out of range for layer with {len} neurons")]
    NeuronOutOfRange { index: usize, len: usize },

    #[error("layer {0} is the output layer and cannot be pruned")]
    OutputLayer(usize),

    #[error("layer {index} uses {found} activation, operation requires relu")]
    NotRelu { index: usize, found: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
