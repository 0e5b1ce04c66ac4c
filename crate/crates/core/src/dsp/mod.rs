//! Time-frequency analysis and synthesis, FFT convolution, phase retrieval
//! and the min-max spectrogram distance.

mod convolve;
pub mod fft;
mod griffin_lim;
mod loss;
mod stft;

use thiserror::Error;

use crate::audio::AudioError;

pub use convolve::{convolve, FftConvolver, BLOCK};
pub use griffin_lim::{griffin_lim, GriffinLimResult, DEFAULT_ITERATIONS};
pub use loss::minmax_loss;
pub use stft::{
    istft, log_magnitude, patch_log_spectrogram, stft, stft_fixed, ComplexSpectrogram,
    LogSpectrogram, StftConfig, PATCH_BINS, PATCH_FRAMES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("invalid STFT configuration: {0}")]
    Config(&'static str),
    #[error("clip has {have} samples, need at least {need}")]
    TooShort { have: usize, need: usize },
    #[error("grid shape mismatch: expected {expected:?} (bins, frames), found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("grid of {bins} x {frames} cannot hold {len} values")]
    GridLength { bins: usize, frames: usize, len: usize },
    #[error("grid value {index} is not finite")]
    NonFinite { index: usize },
    #[error("empty input")]
    Empty,
}
