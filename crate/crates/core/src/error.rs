use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: decode error at byte {offset}: {reason}")]
    Decode {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: case '{case_id}', field '{field}': {reason}")]
    Manifest {
        case_id: String,
        field: String,
        reason: String,
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("empty region of interest")]
    EmptyRoi,

    #[error("region of interest {0:?} lies outside a {1}x{2} image")]
    RoiOutOfBounds(crate::BBox, usize, usize),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("segmentation failed: {0}")]
    SegmentationFailed(String),

    /// The reference slice failed, so there is nothing to propagate from.
    #[error("center slice {index} gave no anchor contour ({reason})")]
    NoAnchor { index: usize, reason: String },

    #[error("no labeled slices for case '{0}'")]
    NoLabels(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
