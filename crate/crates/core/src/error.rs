use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or malformed file format: {0}")]
    Format(String),

    #[error("rectangle {rect:?} does not fit in a {width}x{height} image")]
    OutOfBounds {
        rect: crate::image::PixelRect,
        width: usize,
        height: usize,
    },

    #[error("invalid image size {width}x{height}")]
    InvalidSize { width: usize, height: usize },

    #[error("landmarks are degenerate (collinear or coincident)")]
    DegenerateLandmarks,

    #[error("transform is singular and cannot be inverted")]
    SingularTransform,

    #[error("kernel size must be odd and >= 1, got {0}")]
    InvalidKernel(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("k = {k} exceeds the {available} available gallery faces")]
    KTooLarge { k: usize, available: usize },

    #[error("gradient oracle failure: {0}")]
    OracleFailure(String),

    #[error("image shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("image too small for this metric: {0}")]
    TooSmall(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("pair set is empty: {0}")]
    EmptyPairs(String),

    #[error("missing column `{0}` in prediction table")]
    MissingColumn(String),

    #[error("zero inter-ocular distance for image `{0}`")]
    ZeroInterOcular(String),

    #[error("invalid ensemble weights: {0}")]
    Weight(String),

    #[error("no method has a non-zero attribute-guided score")]
    NoViableMethod,

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("ensemble stage {index} failed: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error("no detection available for frame {0}")]
    MissingDetection(usize),

    #[error("no detection record for image `{0}`")]
    UndetectedImage(String),

    #[error("invalid detection record: {0}")]
    Detection(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than by
    /// the data being processed.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::UnknownKey(_)
                | Error::MissingFile(_)
                | Error::Config(_)
                | Error::UnknownAttribute(_)
                | Error::InvalidKernel(_)
                | Error::Weight(_)
        )
    }
}
