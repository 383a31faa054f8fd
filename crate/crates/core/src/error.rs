use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OdtError>;

#[derive(Debug, Error)]
pub enum OdtError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("illumination wavevector ({kx:.4}, {ky:.4}) rad/um lies outside the propagating band |k| <= {limit:.4}")]
    OutOfBandIllumination { kx: f64, ky: f64, limit: f64 },

    #[error("negative intensity {value} at pixel ({x}, {y})")]
    NegativeIntensity { x: usize, y: usize, value: f64 },

    #[error("inconsistent dataset: {0}")]
    InconsistentDataset(String),

    #[error("reconstruction diverged at epoch {epoch}, angle {angle}: cost is not finite")]
    Diverged { epoch: usize, angle: usize },

    #[error("no reliable overlap between volumes (confidence {confidence:.3} < {threshold:.3})")]
    NoReliableOverlap { confidence: f64, threshold: f64 },

    #[error("schema violation in {file}: {reason}")]
    Schema { file: PathBuf, reason: String },

    #[error("payload length mismatch in {file}: expected {expected} bytes, found {found}")]
    PayloadLength { file: PathBuf, expected: usize, found: usize },

    #[error("non-finite value in payload {file} at element {index}")]
    NonFinitePayload { file: PathBuf, index: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding failed for {path}: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl OdtError {
    /// Stable machine-readable tag, used by the CLI error line and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            OdtError::InvalidDimensions(_) => "invalid_dimensions",
            OdtError::InvalidParameter { .. } => "invalid_parameter",
            OdtError::GridMismatch(_) => "grid_mismatch",
            OdtError::OutOfBandIllumination { .. } => "out_of_band_illumination",
            OdtError::NegativeIntensity { .. } => "negative_intensity",
            OdtError::InconsistentDataset(_) => "inconsistent_dataset",
            OdtError::Diverged { .. } => "diverged",
            OdtError::NoReliableOverlap { .. } => "no_reliable_overlap",
            OdtError::Schema { .. } => "schema",
            OdtError::PayloadLength { .. } => "payload_length",
            OdtError::NonFinitePayload { .. } => "non_finite_payload",
            OdtError::Io { .. } => "io",
            OdtError::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OdtError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        OdtError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
