use std::path::PathBuf;

use crate::datamodel::DefectClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline reports.
///
/// The variants are grouped by what the caller can do about them: input that
/// fails validation, resources that cannot be read or written, and contract
/// violations between pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u32, message: String },

    #[error("unknown defect class label `{0}`")]
    Taxonomy(String),

    #[error("box [{x_min}, {y_min}, {x_max}, {y_max}] lies outside the {width}x{height} image")]
    Bounds {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        width: u32,
        height: u32,
    },

    #[error("invalid box [{0}, {1}, {2}, {3}]: corners must be finite with positive extent")]
    InvalidBox(f64, f64, f64, f64),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    #[error("could not place a `{0}` defect after the rejection-sampling budget")]
    Capacity(DefectClass),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unresolved reference: {0}")]
    Resolution(String),

    #[error("reports are not comparable: {0}")]
    Comparison(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("no line edges detected: {0}")]
    Detection(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by the input data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Codec { .. })
    }
}
