use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("singular matrix: pivot {pivot:e} below threshold {threshold:e} at column {column}")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("power iteration collapsed to the zero vector after {iteration} step(s)")]
    ZeroVector { iteration: usize },

    #[error("too few frames: {frames} available, need more than {needed}")]
    TooFewFrames { frames: usize, needed: usize },

    #[error("degenerate weights: weight sum {sum:e} below 1e-30")]
    DegenerateWeights { sum: f64 },

    #[error("near-zero trace {trace:e} relative to norm {norm:e}")]
    NearZeroTrace { trace: f64, norm: f64 },

    #[error("zero denominator {denom:e} in distortionless normalization")]
    ZeroDenominator { denom: f64 },

    #[error("empty audio")]
    EmptyAudio,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask file: {0}")]
    MaskFormat(String),

    #[error("mask value {value} outside [0, 1] at index {index}")]
    MaskValue { index: usize, value: f64 },

    #[error("reference signal is all zeros")]
    ZeroReference,

    #[error("config: {0}")]
    Config(String),

    #[error("wav {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("frequency bin {bin}: {source}")]
    AtBin {
        bin: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_bin(self, bin: usize) -> Error {
        Error::AtBin {
            bin,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Frequency bin attached anywhere in the context chain.
    pub fn bin(&self) -> Option<usize> {
        match self {
            Error::AtBin { bin, .. } => Some(*bin),
            Error::Stage { source, .. } => source.bin(),
            _ => None,
        }
    }

    /// Innermost error with context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtBin { source, .. } | Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
