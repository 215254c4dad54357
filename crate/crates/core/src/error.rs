use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{format} parse error at line {line}: {message}")]
    Parse {
        format: &'static str,
        line: usize,
        message: String,
    },

    #[error("faces could not be triangulated (lines {lines:?})")]
    RejectedFaces { lines: Vec<usize> },

    #[error("mesh has no usable geometry after cleaning")]
    EmptyGeometry,

    #[error("cannot build Laplace operators: {0}")]
    Operator(String),

    #[error("linear solve failed ({stage}): relative residual {residual:e}")]
    Solver { stage: &'static str, residual: f64 },

    #[error("rib extraction failed for part {part}: {reason}")]
    Extraction { part: usize, reason: String },

    #[error("spine is empty")]
    EmptySpine,

    #[error("invalid selection: {0}")]
    Selection(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("mass initialization failed: {0}")]
    Mass(String),

    #[error("track error: {0}")]
    Track(String),

    #[error("unsupported rig file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("rig file integrity check failed: {0}")]
    Integrity(String),

    #[error("corrupt rig: check `{check}` failed: {detail}")]
    CorruptRig { check: &'static str, detail: String },

    #[error("malformed binary data: {0}")]
    Codec(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
