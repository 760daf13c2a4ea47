use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("cannot draw {requested} distinct items from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid model spec: {0}")]
    InvalidModelSpec(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("client {0} holds no examples")]
    EmptyClient(usize),

    #[error("{path}: bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX file (expected {expected} bytes, found {found})")]
    TruncatedIdx {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot split {examples} examples across {clients} clients")]
    TooManyClients { clients: usize, examples: usize },

    #[error(
        "label skew needs at least one client per class ({clients} clients, {classes} classes)"
    )]
    TooFewClientsForLabelSkew { clients: usize, classes: usize },

    #[error("class {class} has {examples} examples but is assigned to {clients} clients")]
    ClassTooSmall {
        class: usize,
        examples: usize,
        clients: usize,
    },

    #[error("quantity skew with ratio {ratio} over {clients} clients leaves a client empty")]
    ZeroSizedClient { ratio: f64, clients: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("quantization code {code} exceeds the {bits}-bit range")]
    CorruptCode { code: u32, bits: u32 },

    #[error("invalid codec policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid federation config: {0}")]
    InvalidConfig(String),

    #[error("no client updates to aggregate")]
    NoUpdates,

    #[error("round {got} recorded after round {previous}")]
    OutOfOrderRound { previous: u64, got: u64 },

    #[error("round {round}: cumulative {direction} bits {found}, expected {expected}")]
    CumulativeMismatch {
        round: u64,
        direction: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("run logs differ in length ({left} vs {right} rounds)")]
    LogLengthMismatch { left: usize, right: usize },

    #[error("run log has no evaluated round")]
    MissingEvaluation,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
