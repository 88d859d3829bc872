use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LatoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LatoError {
    /// Landmark JSON did not follow the region-grouped schema.
    #[error("landmark schema error in region {region}: {message}")]
    Schema { region: String, message: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Two operands live on different canvases (or a model was trained for another canvas).
    #[error("unit mismatch: {0}")]
    Unit(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Geometry that the sanity checks could not repair.
    #[error("sanity check failed: {0}")]
    Sanity(String),

    #[error("scorer {kind} failed after {attempts} attempt(s): {message}")]
    Scorer {
        kind: String,
        attempts: u32,
        message: String,
    },

    #[error("corrupt model file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LatoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LatoError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(region: &str, message: impl Into<String>) -> Self {
        LatoError::Schema {
            region: region.to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, LatoError::Io { .. })
    }
}
