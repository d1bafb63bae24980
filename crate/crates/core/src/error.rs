use thiserror::Error;

/// Errors raised by the signal-processing and feature-extraction routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid sample rate {0} Hz")]
    InvalidRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("decomposition depth {requested} not feasible, maximum is {max_level}")]
    Depth { requested: usize, max_level: usize },
    #[error("inconsistent wavelet tree: {0}")]
    Structure(String),
    #[error("insufficient samples: need {needed}, have {available}")]
    Length { needed: usize, available: usize },
    #[error("band plan error: {0}")]
    Plan(String),
    #[error("unsupported sample rate {0} Hz for the canonical band plan")]
    UnsupportedRate(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("frames are not aligned: {0}")]
    Alignment(String),
    #[error("event indices must increase monotonically (index {0})")]
    Ordering(usize),
    #[error("event index {index} lacks a margin of {margin} samples in a stream of {len}")]
    Boundary { index: usize, margin: usize, len: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
