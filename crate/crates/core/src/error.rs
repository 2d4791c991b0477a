use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the atlas library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("mesh is not watertight: edge ({0}, {1}) is shared by {2} faces")]
    NotWatertight(usize, usize, usize),

    #[error("face {0} is degenerate (zero area)")]
    DegenerateFace(usize),

    #[error("face {face} references vertex {index} but mesh has {n_vertices} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        n_vertices: usize,
    },

    #[error("surface index {index} out of range 1..={n_surfaces}")]
    SurfaceIndex { index: usize, n_surfaces: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The optimizer produced NaN or infinity and was stopped.
    #[error("numerical failure in {stage} at step {step}: {term} is not finite")]
    NumericalAbort {
        stage: &'static str,
        step: usize,
        term: String,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
