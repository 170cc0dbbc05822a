use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid keypoint index {0} (expected 0..=32)")]
    InvalidKeypoint(usize),
    #[error("unknown keypoint name {0:?}")]
    UnknownKeypointName(String),
    #[error("degenerate pose: {0}")]
    DegeneratePose(&'static str),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed {kind}: {detail}")]
    Format { kind: &'static str, detail: String },
    #[error("annotation sets cover different images: {0}")]
    MismatchedManifests(String),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
