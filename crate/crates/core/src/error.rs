use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("split has {available} eligible classes, task needs {needed}")]
    InsufficientClasses { available: usize, needed: usize },

    #[error("class {class} has {available} examples, task needs {needed}")]
    InsufficientExamples {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("way {0} has an empty pool")]
    EmptyPool(usize),

    #[error("cannot corrupt labels of a split with a single class")]
    SingleClassNoise,

    #[error("{path}: row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: dataset file is empty")]
    EmptyDataset { path: PathBuf },

    #[error("manifold with {0} pair(s) has no negatives")]
    NoNegatives(usize),

    #[error("empty query set")]
    EmptyQuery,

    #[error("network already has a classification head")]
    HeadPresent,

    #[error("task has {task} ways but the head has {head} outputs")]
    WayMismatch { task: usize, head: usize },

    #[error("exact permanent limited to N <= {max}, got {n}")]
    TooManyWays { n: usize, max: usize },

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("meta-parameters became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InsufficientClasses { .. } => "insufficient_classes",
            Error::InsufficientExamples { .. } => "insufficient_examples",
            Error::EmptyPool(_) => "empty_pool",
            Error::SingleClassNoise => "single_class_noise",
            Error::Csv { .. } => "csv",
            Error::EmptyDataset { .. } => "empty_dataset",
            Error::NoNegatives(_) => "no_negatives",
            Error::EmptyQuery => "empty_query",
            Error::HeadPresent => "head_present",
            Error::WayMismatch { .. } => "way_mismatch",
            Error::TooManyWays { .. } => "too_many_ways",
            Error::TooFewValues { .. } => "too_few_values",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::CheckpointCorrupt(_) => "checkpoint_corrupt",
            Error::CheckpointShape(_) => "checkpoint_shape",
            Error::Diverged { .. } => "diverged",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
