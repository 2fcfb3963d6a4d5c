//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected input shape {expected:?}, got {got:?}")]
    BadInputShape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("data length {len} does not match shape {shape:?} ({expected} values)")]
    BadDataLength {
        shape: [usize; 4],
        len: usize,
        expected: usize,
    },

    #[error("max-pool requires even spatial extents, got {h}x{w}")]
    OddSpatialExtent { h: usize, w: usize },

    #[error("channel mismatch: input has {input} channels, kernels expect {kernels}")]
    ChannelMismatch { input: usize, kernels: usize },

    #[error("unknown architecture id `{0}` (expected cnn1, cnn2 or cnn3)")]
    UnknownArch(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint shape table inconsistent with architecture {arch}: {detail}")]
    InconsistentShapeTable { arch: String, detail: String },

    #[error("class directory `{0}` not found (expected Parasitized/ and Uninfected/)")]
    MissingClassDir(PathBuf),

    #[error("no images found under `{0}`")]
    NoImages(PathBuf),

    #[error("split ratio {ratio} leaves an empty {side} side for {n} samples")]
    DegenerateSplit {
        ratio: f64,
        side: &'static str,
        n: usize,
    },

    #[error("split ratio must be in (0, 1), got {0}")]
    BadSplitRatio(f64),

    #[error("failed to decode image `{path}`: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("confusion matrix has no samples")]
    EmptyConfusion,

    #[error("ROC curve requires both classes, got only {0}")]
    SingleClass(&'static str),

    #[error("model has no convolutional layer")]
    NoConvLayer,

    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(f64),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("benchmark requires at least {min} iterations, got {got}")]
    TooFewIterations { min: usize, got: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed manifest at line {line}: {detail}")]
    BadManifest { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
