use std::path::PathBuf;

/// Errors produced anywhere in the recognition toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("evaluation failed at node '{node}': {source}")]
    Node {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic: expected \"TRMB\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported bundle format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated bundle: {0}")]
    Truncated(String),

    #[error("manifest/weight mismatch: {0}")]
    ManifestMismatch(String),

    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("invalid label list: {0}")]
    Labels(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unknown pass '{name}' (valid passes: {valid})")]
    UnknownPass { name: String, valid: String },

    #[error("unsupported quantization width: {0} bits (only 8 is supported)")]
    UnsupportedBits(u32),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
