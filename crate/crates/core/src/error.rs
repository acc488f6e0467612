use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid convolution geometry: {0}")]
    ConvGeometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("IDX format error: {0}")]
    Idx(String),

    #[error("LP dimension mismatch: {0}")]
    LpDimension(String),

    #[error("LP solver stalled after {0} pivots")]
    LpStalled(usize),

    #[error("bounds crossed at layer {layer}, neuron {neuron}: [{lower}, {upper}]")]
    CrossedBounds {
        layer: usize,
        neuron: usize,
        lower: f64,
        upper: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
