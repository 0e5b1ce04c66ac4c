use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::FftPlan;
use super::DspError;
use crate::audio::{AudioClip, SAMPLE_RATE};

/// Frames in one model patch (3 s at a 10 ms hop).
pub const PATCH_FRAMES: usize = 300;
/// Frequency bins at the default 512-point FFT.
pub const PATCH_BINS: usize = 257;

/// Framing parameters shared by analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 160,
            sample_rate: SAMPLE_RATE,
            log_floor: 1e-5,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(DspError::Config("fft_size must be a power of two"));
        }
        if self.hop == 0 || self.hop > self.fft_size / 2 {
            return Err(DspError::Config("hop must be in 1..=fft_size/2"));
        }
        if self.sample_rate == 0 {
            return Err(DspError::Config("sample_rate must be positive"));
        }
        if !(self.log_floor > 0.0) {
            return Err(DspError::Config("log_floor must be positive"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of whole frames that fit in `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    /// Samples spanned by `frames` frames.
    pub fn span_of(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.fft_size
        }
    }

    /// Periodic Hann window of length `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size)
            .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n))
            .collect()
    }

    pub fn log_floor_ln(&self) -> f64 {
        libm::log(self.log_floor)
    }
}

/// One-sided STFT grid stored bin-major: `data[bin * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Natural-log magnitude grid, bin-major like [`ComplexSpectrogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f32>,
    pub config: StftConfig,
}

impl LogSpectrogram {
    pub fn new(
        bins: usize,
        frames: usize,
        data: Vec<f32>,
        config: StftConfig,
    ) -> Result<Self, DspError> {
        if bins != config.bins() {
            return Err(DspError::Shape {
                expected: (config.bins(), frames),
                found: (bins, frames),
            });
        }
        if frames == 0 || data.len() != bins * frames {
            return Err(DspError::GridLength {
                bins,
                frames,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(DspError::NonFinite { index });
        }
        Ok(Self {
            bins,
            frames,
            data,
            config,
        })
    }

    /// Grid filled with the log floor (the log-magnitude of silence).
    pub fn silent(frames: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        Self {
            bins,
            frames,
            data: vec![config.log_floor_ln() as f32; bins * frames],
            config,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.data[bin * self.frames + frame]
    }

    pub fn at_mut(&mut self, bin: usize, frame: usize) -> &mut f32 {
        &mut self.data[bin * self.frames + frame]
    }

    pub fn ensure_shape(&self, bins: usize, frames: usize) -> Result<(), DspError> {
        if self.bins != bins || self.frames != frames {
            return Err(DspError::Shape {
                expected: (bins, frames),
                found: (self.bins, self.frames),
            });
        }
        Ok(())
    }

    /// Frame-major copy: `out[frame * bins + bin]`.
    pub fn to_frame_major(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.data.len()];
        for b in 0..self.bins {
            for f in 0..self.frames {
                out[f * self.bins + b] = self.data[b * self.frames + f];
            }
        }
        out
    }

    pub fn from_frame_major(
        frame_major: &[f32],
        frames: usize,
        config: StftConfig,
    ) -> Result<Self, DspError> {
        let bins = config.bins();
        if frame_major.len() != bins * frames {
            return Err(DspError::GridLength {
                bins,
                frames,
                len: frame_major.len(),
            });
        }
        let mut data = vec![0.0; bins * frames];
        for f in 0..frames {
            for b in 0..bins {
                data[b * frames + f] = frame_major[f * bins + b];
            }
        }
        Self::new(bins, frames, data, config)
    }

    /// Frames `start..end` as a new grid.
    pub fn frame_range(&self, start: usize, end: usize) -> Self {
        let frames = end - start;
        let mut data = Vec::with_capacity(self.bins * frames);
        for b in 0..self.bins {
            let row = b * self.frames;
            data.extend_from_slice(&self.data[row + start..row + end]);
        }
        Self {
            bins: self.bins,
            frames,
            data,
            config: self.config,
        }
    }

    /// Concatenates grids along time.
    pub fn concat_frames(parts: &[LogSpectrogram]) -> Result<Self, DspError> {
        let first = parts.first().ok_or(DspError::Empty)?;
        let frames: usize = parts.iter().map(|p| p.frames).sum();
        let bins = first.bins;
        let mut data = Vec::with_capacity(bins * frames);
        for b in 0..bins {
            for p in parts {
                p.ensure_shape(bins, p.frames)?;
                data.extend_from_slice(&p.data[b * p.frames..(b + 1) * p.frames]);
            }
        }
        Ok(Self {
            bins,
            frames,
            data,
            config: first.config,
        })
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|&v| libm::exp(v as f64)).collect()
    }
}

/// Windowed one-sided STFT. Frame `k` covers samples `[k*hop, k*hop + fft_size)`.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<ComplexSpectrogram, DspError> {
    cfg.validate()?;
    clip.check_rate(cfg.sample_rate)?;
    if clip.len() < cfg.fft_size {
        return Err(DspError::TooShort {
            have: clip.len(),
            need: cfg.fft_size,
        });
    }
    let frames = cfg.frames_for(clip.len());
    Ok(stft_frames(&clip.samples, cfg, frames, &FftPlan::new(cfg.fft_size), &cfg.window()))
}

/// STFT after cutting or zero-padding `clip` so it yields exactly `frames` frames.
pub fn stft_fixed(
    clip: &AudioClip,
    cfg: &StftConfig,
    frames: usize,
) -> Result<ComplexSpectrogram, DspError> {
    if frames == 0 {
        return Err(DspError::Empty);
    }
    stft(&clip.fit_to(cfg.span_of(frames)), cfg)
}

/// Convenience for the canonical 257 x 300 patch grid.
pub fn patch_log_spectrogram(
    clip: &AudioClip,
    cfg: &StftConfig,
) -> Result<LogSpectrogram, DspError> {
    Ok(log_magnitude(&stft_fixed(clip, cfg, PATCH_FRAMES)?))
}

pub(crate) fn stft_frames(
    samples: &[f64],
    cfg: &StftConfig,
    frames: usize,
    plan: &FftPlan,
    window: &[f64],
) -> ComplexSpectrogram {
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(samples[start + i] * window[i], 0.0);
        }
        plan.forward(&mut buf);
        for b in 0..bins {
            data[b * frames + f] = buf[b];
        }
    }
    ComplexSpectrogram {
        bins,
        frames,
        data,
        config: *cfg,
    }
}

/// Least-squares inverse STFT: weighted overlap-add normalized by the squared
/// window sum. Output spans `(frames - 1) * hop + fft_size` samples.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip, DspError> {
    let cfg = spec.config;
    cfg.validate()?;
    if spec.bins != cfg.bins() || spec.data.len() != spec.bins * spec.frames {
        return Err(DspError::GridLength {
            bins: spec.bins,
            frames: spec.frames,
            len: spec.data.len(),
        });
    }
    if spec.frames == 0 {
        return Err(DspError::Empty);
    }
    let samples = istft_samples(spec, &FftPlan::new(cfg.fft_size), &cfg.window());
    Ok(AudioClip {
        samples,
        sample_rate: cfg.sample_rate,
    })
}

pub(crate) fn istft_samples(spec: &ComplexSpectrogram, plan: &FftPlan, window: &[f64]) -> Vec<f64> {
    let cfg = spec.config;
    let n = cfg.fft_size;
    let len = cfg.span_of(spec.frames);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..spec.frames {
        buf[0] = spec.at(0, f);
        for b in 1..spec.bins {
            let v = spec.at(b, f);
            buf[b] = v;
            if b < n - b {
                buf[n - b] = v.conj();
            }
        }
        plan.inverse(&mut buf);
        let start = f * cfg.hop;
        for i in 0..n {
            out[start + i] += window[i] * buf[i].re;
            norm[start + i] += window[i] * window[i];
        }
    }
    // Positions where every covering window is zero do not influence the
    // STFT, so zero is the least-squares choice there.
    for (o, w) in out.iter_mut().zip(&norm) {
        *o = if *w > 1e-10 { *o / w } else { 0.0 };
    }
    out
}

/// `ln(max(|value|, log_floor))` per entry.
pub fn log_magnitude(spec: &ComplexSpectrogram) -> LogSpectrogram {
    let floor = spec.config.log_floor;
    let data = spec
        .data
        .iter()
        .map(|c| libm::log(c.norm().max(floor)) as f32)
        .collect();
    LogSpectrogram {
        bins: spec.bins,
        frames: spec.frames,
        data,
        config: spec.config,
    }
}
