use std::io;

use thiserror::Error;

/// Errors produced anywhere in the compression pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("non-finite weight in layer {layer:?} at flat index {index}")]
    NonFiniteWeight { layer: String, index: usize },
    #[error("duplicate layer name {0:?}")]
    DuplicateLayer(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("symbol {0} not in code table")]
    UnknownSymbol(u32),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("oracle size bound exceeded: {0}")]
    SizeExceeded(String),
    #[error("layer {layer:?}, {stage} stage: {source}")]
    Layer {
        layer: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_layer(self, layer: &str, stage: &'static str) -> Error {
        Error::Layer {
            layer: layer.to_owned(),
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
