use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("degenerate layer: {0}")]
    DegenerateLayer(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("tape does not belong to this layer: {0}")]
    TapeMismatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("spatial dims too small to pool: {height}x{width}")]
    SpatialTooSmall { height: usize, width: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {0} outside {{0, 1}}")]
    InvalidLabel(u8),

    #[error("missing cached zero embedding (model kind is not skip)")]
    MissingZeroEmbedding,

    #[error("redundancy measurement {spec} cannot be applied to output {output}")]
    IncompatibleOutput { spec: String, output: String },

    #[error("continuous output {0} cannot be compared without a declared discretization")]
    NotDiscretized(String),

    #[error("cache holds {have} entries but {need} neighbours were requested")]
    CacheUnderfull { need: usize, have: usize },

    #[error("filter cannot reduce computation: C(h) = {c_h} <= C(h^) = {c_hhat}")]
    FilterCannotReduce { c_h: f64, c_hhat: f64 },

    #[error("empty hypothesis family")]
    EmptyFamily,

    #[error("empty index subset")]
    EmptySubset,

    #[error("member {member} violates |h(x) - c(x)| <= {bound} at sample {sample} (value {value})")]
    BoundViolation {
        member: usize,
        sample: usize,
        value: f64,
        bound: f64,
    },

    #[error("exact enumeration requested for m = {m} samples, cap is {cap}")]
    ExactCapExceeded { m: usize, cap: usize },

    #[error("{0}")]
    Mode(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
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
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
