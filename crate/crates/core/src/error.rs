use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty binary")]
    EmptyBinary,

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("pixel buffer holds {found} values, expected {expected}")]
    PixelCount { expected: usize, found: usize },

    #[error("stack shape mismatch: {left:?} vs {right:?}")]
    StackShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("tensor holds {found} values, expected {expected}")]
    TensorLength { expected: usize, found: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("heatmap value {value} at index {index} outside [0, 1]")]
    HeatmapRange { index: usize, value: f64 },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("input is {found}x{found_h}, network expects {expected}x{expected}")]
    InputSize {
        expected: usize,
        found: usize,
        found_h: usize,
    },

    #[error("cannot aggregate an empty heatmap sequence")]
    EmptyHeatmaps,

    #[error("class sets differ: only in first {only_left:?}, only in second {only_right:?}")]
    ClassSetMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),

    #[error("missing mask for class {0:?}")]
    MissingMask(Vec<String>),

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported npy version {0}.{1}")]
    NpyVersion(u8, u8),

    #[error("malformed npy header: {0}")]
    NpyHeader(String),

    #[error("wrong dtype: expected <f4, found {0}")]
    WrongDtype(String),

    #[error("fortran-order arrays are not supported")]
    FortranOrder,

    #[error("wrong rank: expected 3, found {0}")]
    WrongRank(usize),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("empty confusion matrix")]
    EmptyConfusion,

    #[error("labels and predictions differ in length ({labels} vs {preds})")]
    LengthMismatch { labels: usize, preds: usize },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("png: {0}")]
    Png(String),

    #[error("{path}: {inner}")]
    Path { path: PathBuf, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attaches a file path to the error for reporting.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::Path {
            path: path.into(),
            inner: Box::new(self),
        }
    }
}
