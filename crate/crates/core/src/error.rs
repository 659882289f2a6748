//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/raster extents that do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A parameter outside its documented domain (zero stride, bad ratio, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A config key/value the schema does not accept.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// File payload violates its format; `offset` is the first defective byte.
    #[error("bad magic at offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: String,
        found: String,
    },

    /// File ended before the field starting at `offset` could be read.
    #[error("truncated file at offset {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },

    /// A decoded field holds an inadmissible value.
    #[error("invalid field at offset {offset}: {what}")]
    InvalidField { offset: usize, what: String },

    /// Rasters cannot be fused; carries the printable alignment report.
    #[error("rasters are not aligned: {0}")]
    Misaligned(String),

    /// A NaN/Inf appeared where the run cannot continue (loss, gradients).
    #[error("non-finite value in {0}; aborting")]
    NonFinite(String),

    /// Every fitness evaluation of a swarm run returned NaN.
    #[error("all fitness evaluations were NaN")]
    AllEvaluationsNan,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
