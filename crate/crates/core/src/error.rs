use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("frame strides differ: {0:?}")]
    StrideMismatch(Vec<f32>),

    #[error("frame counts spread {min}..{max} exceeds tolerance {tolerance}")]
    LengthSpreadExceeded {
        min: usize,
        max: usize,
        tolerance: usize,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("frame count mismatch: {0}")]
    FrameMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask shape mismatch: {0}")]
    MaskShapeMismatch(String),

    #[error("width {0} is odd")]
    OddWidth(usize),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("target needs at least {required} frames, got {available}")]
    InfeasibleTarget { required: usize, available: usize },

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),

    #[error("row {row} is not a normalized log distribution (logsumexp {logsumexp})")]
    UnnormalizedInput { row: usize, logsumexp: f64 },

    #[error("instance too large for enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("infeasible utterances (id: required/available frames): {}", format_infeasible(.0))]
    InfeasibleUtterances(Vec<Infeasible>),

    #[error("non-finite loss at epoch {epoch} batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty reference: error rate undefined")]
    EmptyReference,

    #[error("model tag {0:?} missing from manifest")]
    TagMissing(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}

/// An utterance too short for its transcript under CTC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Infeasible {
    pub id: String,
    pub required: usize,
    pub available: usize,
}

fn format_infeasible(items: &[Infeasible]) -> String {
    items
        .iter()
        .map(|i| format!("{}: {}/{}", i.id, i.required, i.available))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line surface:
    /// 2 configuration/validation, 3 I/O or format, 4 data infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format(_) | Error::InvalidMatrix(_) => 3,
            Error::InfeasibleUtterances(_) | Error::InfeasibleTarget { .. } => 4,
            _ => 2,
        }
    }
}
