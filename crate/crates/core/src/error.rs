use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: extents must be >= 1 and rank >= 1")]
    InvalidShape(Vec<usize>),

    #[error("extent product mismatch: {from:?} has {from_len} entries, {to} requested")]
    ExtentProduct {
        from: Vec<usize>,
        from_len: usize,
        to: String,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("invalid permutation {order:?} for a rank-{rank} tensor")]
    InvalidPermutation { order: Vec<usize>, rank: usize },

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },

    #[error("svd failed to converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("invalid tt ranks: {0}")]
    InvalidRanks(String),

    #[error("tensorization mismatch: {0}")]
    Tensorization(String),

    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad idx magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("compression target {target}x unreachable: rank 1 achieves only {best:.3}x")]
    RankTargetUnreachable { target: f64, best: f64 },

    #[error("phase {phase} failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_phase(self, phase: &str) -> Error {
        Error::Phase {
            phase: phase.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping phase wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } => source.root(),
            other => other,
        }
    }
}
