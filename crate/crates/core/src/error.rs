use std::io;

use thiserror::Error;

/// Errors produced by the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {window_len}")]
    SignalTooShort { len: usize, window_len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mean feature vector requires full spectrogram")]
    IncompleteSpectrogram,

    #[error("empty spectrogram")]
    EmptySpectrogram,

    #[error("non-finite feature at active entry (row {row}, column {col})")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("k-means produced an empty cluster after {attempts} attempts")]
    EmptyCluster { attempts: usize },

    #[error("training collapsed: {0}")]
    TrainingCollapsed(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("direction ({azimuth}, {elevation}) lies outside the filter-bank grid")]
    DirectionOutOfRange { azimuth: f64, elevation: f64 },

    #[error("no signal")]
    NoSignal,

    #[error("degenerate regression input: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
