//! Spoken language identification toolkit.
//!
//! Four cepstral front ends ([`features::FeatureKind`]: MFCC, PLP and the
//! hybrids BFCC and RPLP) feed two classifier stacks: LBG vector
//! quantization scored by dynamic time warping ([`vq_dtw`]) and diagonal
//! Gaussian mixture language models trained by EM ([`gmm`]). The
//! [`harness`] module ties them to a corpus manifest, persists models and
//! evaluates fixed-length test segments.

pub mod audio_io;
pub mod cli;
pub mod error;
pub mod features;
pub mod frontend;
pub mod gmm;
pub mod harness;
pub mod vq_dtw;

pub use error::{LidError, Result};
pub use features::{FeatureConfig, FeatureKind, FeatureMatrix};
pub use audio_io::Waveform;

/// Canonical analysis rate.
pub const CANONICAL_RATE: u32 = 16_000;
