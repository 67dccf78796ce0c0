use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. `kind()` gives the stable,
/// machine-parseable category used by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate image: {0}")]
    DegenerateImage(String),

    #[error("degenerate prototype `{0}`: HOG vector is all zeros")]
    DegeneratePrototype(String),

    #[error("duplicate class id `{0}`")]
    DuplicateClassId(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("HOG config mismatch between prototype sets")]
    HogConfigMismatch,

    #[error("backward called without a training-mode forward pass")]
    NoForwardState,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("label `{0}` is outside the unseen class set")]
    LabelOutsideUnseen(String),

    #[error("prototype coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("top-T value {top_t} out of range 1..={max}")]
    TopTOutOfRange { top_t: usize, max: usize },

    #[error("could not render distinct template for class {0} within the retry budget")]
    TemplateCollisionExhausted(usize),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("manifest row {row}: crop {crop:?} exceeds image bounds {width}x{height}")]
    BadCrop {
        row: usize,
        crop: [u32; 4],
        width: u32,
        height: u32,
    },

    #[error("manifest row {row}: unknown partition `{value}`")]
    UnknownPartition { row: usize, value: String },

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::DegenerateImage(_) => "degenerate-image",
            Error::DegeneratePrototype(_) => "degenerate-prototype",
            Error::DuplicateClassId(_) => "duplicate-class-id",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::HogConfigMismatch => "hog-config-mismatch",
            Error::NoForwardState => "no-forward-state",
            Error::EmptyDataset => "empty-dataset",
            Error::InvalidCount(_) => "invalid-count",
            Error::LabelOutsideUnseen(_) => "label-outside-unseen",
            Error::CoverageMismatch(_) => "coverage-mismatch",
            Error::TopTOutOfRange { .. } => "top-t-out-of-range",
            Error::TemplateCollisionExhausted(_) => "template-collision-exhausted",
            Error::MissingFile(_) => "missing-file",
            Error::BadCrop { .. } => "bad-crop",
            Error::UnknownPartition { .. } => "unknown-partition",
            Error::UnknownClass(_) => "unknown-class",
            Error::Checkpoint(_) => "bad-checkpoint",
            Error::Io(_) => "io",
            Error::Image(_) => "image-codec",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
