use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing video stream")]
    MissingVideo,

    #[error("missing audio stream")]
    MissingAudio,

    #[error("variable frame rate: {0}")]
    VariableFrameRate(String),

    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),

    #[error("malformed media file: {0}")]
    MalformedMedia(String),

    #[error("invalid sample rate {0}")]
    InvalidSampleRate(i64),

    #[error("unsupported frame rate {0} (expected 30)")]
    UnsupportedFrameRate(f64),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("wrong input length: expected {expected}, got {actual}")]
    WrongInputLength { expected: usize, actual: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),

    #[error("checksum mismatch for sample {index} ({file})")]
    ChecksumMismatch { index: usize, file: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: found {0:?}")]
    CheckpointVersion(String),

    #[error("mode mismatch: expected {expected}, found {found}")]
    ModeMismatch { expected: String, found: String },

    #[error("empty score list")]
    EmptyScores,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty evaluation set")]
    EmptyEvaluationSet,

    #[error("empty sequence")]
    EmptySequence,

    #[error("image smaller than window: {size} < {window}")]
    ImageSmallerThanWindow { size: usize, window: usize },

    #[error("feature extractor failed: {0}")]
    Extractor(String),

    #[error("missing checkpoint for condition {0}")]
    MissingCheckpoint(String),

    #[error("non-finite loss at iteration {iteration}: d_loss={d_loss} g_loss={g_loss}")]
    NonFiniteLoss {
        iteration: u64,
        d_loss: f64,
        g_loss: f64,
    },

    #[error("face detector: {0}")]
    Detector(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
