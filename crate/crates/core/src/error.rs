use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("crop is empty: box lies outside the image or has zero area")]
    EmptyCrop,

    #[error("degenerate bounding box (width {width}, height {height})")]
    DegenerateBox { width: f64, height: f64 },

    #[error("image dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing seqinfo.ini in {0}")]
    MissingSeqInfo(PathBuf),

    #[error("invalid seqinfo.ini in {path}: {reason}")]
    InvalidSeqInfo { path: PathBuf, reason: String },

    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing frame file for frame {frame} under {dir}")]
    MissingFrameFile { dir: PathBuf, frame: usize },

    #[error("frame {0} is not available")]
    MissingFrame(usize),

    #[error("no detections available for frame {0}")]
    MissingDetections(usize),

    #[error("sequence has no ground truth")]
    NoGroundTruth,

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
