use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    ImageWrite {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {width}x{height} does not fit on a {canvas}x{canvas} canvas")]
    ExceedsCanvas { width: usize, height: usize, canvas: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no foreground")]
    NoForeground,
    #[error("too few foreground rows: {found} (need at least {needed})")]
    TooFewRows { found: usize, needed: usize },
    #[error("axis span {span} too short (need at least {needed})")]
    SpanTooShort { span: f64, needed: f64 },
    #[error("point ({y:.2}, {x:.2}) lies outside the {width}x{height} canvas")]
    PointOutOfCanvas { y: f64, x: f64, width: usize, height: usize },
    #[error("no significant bend (max turning angle {angle:.2} deg)")]
    NoSignificantBend { angle: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called before any forward pass")]
    NoForward,
    #[error("training aborted: {0}")]
    TrainingAborted(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    /// True for failures of the optimisation itself rather than of the inputs.
    pub fn is_training_abort(&self) -> bool {
        matches!(self, Error::TrainingAborted(_))
    }
}
