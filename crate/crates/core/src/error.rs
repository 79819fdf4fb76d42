use std::io;

use thiserror::Error;

/// Errors produced by the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate intensity range: volume is constant")]
    DegenerateIntensity,

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        actual: [usize; 3],
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no foreground: mask contains no set voxels")]
    NoForeground,

    #[error("degenerate mask: signed distance needs both foreground and background voxels")]
    DegenerateMask,

    #[error("empty mask")]
    EmptyMask,

    #[error("undefined surface distance: {0} mask is empty")]
    UndefinedSurfaceDistance(&'static str),

    #[error("value {value} at voxel {index} is not binary")]
    NotBinary { index: usize, value: f64 },

    #[error("spatial shape {shape:?} is not divisible by {factor}; pad the input to a multiple of {factor}")]
    NotDivisible { shape: [usize; 3], factor: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0} (supported: uint8, int16, float32)")]
    UnsupportedDatatype(i16),

    #[error("unsupported dimension count {0}: only 3D volumes are supported")]
    DimensionCount(i16),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
