use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LidError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LidError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("empty signal")]
    EmptySignal,
    #[error("bad FFT size {nfft} for frame of {frame_len} samples (must be a power of two >= frame length)")]
    BadFftSize { nfft: usize, frame_len: usize },
    #[error("degenerate filterbank: filter {0} has no support")]
    DegenerateBank(usize),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("singular autocorrelation: {0}")]
    SingularAutocorr(String),
    #[error("non-positive prediction gain {0}")]
    NonPositiveGain(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate mixture component {0}")]
    DegenerateComponent(usize),
    #[error("empty sequence")]
    EmptySequence,
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
