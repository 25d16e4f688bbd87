use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FalpError {
    #[error("grid size mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no perfect binary array of size {0}; admissible sizes are 2^k or 3*2^k with k >= 1 (2, 4, 6, 8, 12, 16, 24, 32, ...)")]
    UnsupportedSize(usize),
    #[error("spectral mask is not unimodular (|Z| spans [{min:.3e}, {max:.3e}])")]
    NonUnimodularMask { min: f64, max: f64 },
    #[error("reference channel has zero norm")]
    ZeroReference,
    #[error("subsampling size {m} outside 1..={max}")]
    MeasurementCount { m: usize, max: usize },
    #[error("unsupported Golay length {0} (must be a power of two)")]
    GolayLength(usize),
    #[error("tap index {tap} out of range for {l} taps")]
    TapIndex { tap: usize, l: usize },
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FalpError>;
