use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value encountered in {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph; run a new forward pass first")]
    BackwardTwice,

    #[error("batch norm running statistics are uninitialized")]
    UninitializedStats,

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("matrix extent overflow ({rows} x {cols})")]
    SizeOverflow { rows: u32, cols: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("clip `{clip}`: feature file {path} is missing or unreadable: {reason}")]
    MissingFeature {
        clip: String,
        path: PathBuf,
        reason: String,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("aggregation weights sum to {0}, expected 1")]
    WeightSum(f32),

    #[error("loss mask selects no positions")]
    EmptyMask,

    #[error("evaluation corpus is empty")]
    EmptyCorpus,

    #[error("CIDEr needs at least 2 clips for document frequencies, got {0}")]
    DegenerateIdf(usize),

    #[error("candidate ids not in manifest split: {0:?}")]
    UnknownIds(Vec<String>),
}

impl Error {
    /// Stable machine-readable code for diagnostics output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::BackwardTwice => "backward_twice",
            Error::UninitializedStats => "uninitialized_stats",
            Error::MissingGradient(_) => "missing_gradient",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated { .. } => "truncated",
            Error::SizeOverflow { .. } => "size_overflow",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::MissingFeature { .. } => "missing_feature",
            Error::InvalidManifest(_) => "invalid_manifest",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::WeightSum(_) => "weight_sum",
            Error::EmptyMask => "empty_mask",
            Error::EmptyCorpus => "empty_corpus",
            Error::DegenerateIdf(_) => "degenerate_idf",
            Error::UnknownIds(_) => "unknown_ids",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
