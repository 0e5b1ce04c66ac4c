//! Mono audio clips and amplitude utilities.

use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

/// Canonical pipeline sample rate. 10 ms hops are 160 samples.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AudioError {
    #[error("clip is empty")]
    Empty,
    #[error("clip is silent (all samples zero)")]
    Silent,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("sample rate mismatch: {expected} Hz vs {found} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("sample rate must be positive")]
    ZeroRate,
    #[error("invalid gain interval [{lo}, {hi}]: need 0 < lo <= hi <= 1")]
    GainInterval { lo: f64, hi: f64 },
    #[error("target peak {0} outside (0, 1]")]
    TargetPeak(f64),
    #[error("clip has {have} samples, need at least {need}")]
    TooShort { have: usize, need: usize },
}

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroRate);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: alloc::vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let energy: f64 = self.samples.iter().map(|s| s * s).sum();
        libm::sqrt(energy / self.samples.len() as f64)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Copy of `self` cut or zero-padded to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn check_finite(&self) -> Result<(), AudioError> {
        match self.samples.iter().position(|s| !s.is_finite()) {
            Some(index) => Err(AudioError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn check_rate(&self, expected: u32) -> Result<(), AudioError> {
        if self.sample_rate != expected {
            return Err(AudioError::RateMismatch {
                expected,
                found: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Rescales `clip` so that its largest absolute sample equals `target_peak`.
pub fn peak_normalize(clip: &AudioClip, target_peak: f64) -> Result<AudioClip, AudioError> {
    if !(target_peak > 0.0 && target_peak <= 1.0) {
        return Err(AudioError::TargetPeak(target_peak));
    }
    if clip.is_empty() {
        return Err(AudioError::Empty);
    }
    let peak = clip.peak();
    if peak == 0.0 {
        return Err(AudioError::Silent);
    }
    Ok(clip.scaled(target_peak / peak))
}

/// Peak-normalizes and then scales by a gain drawn uniformly from `[lo, hi]`.
pub fn random_gain<R: Rng + ?Sized>(
    clip: &AudioClip,
    rng: &mut R,
    lo: f64,
    hi: f64,
) -> Result<AudioClip, AudioError> {
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(AudioError::GainInterval { lo, hi });
    }
    let u = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    peak_normalize(clip, u)
}
