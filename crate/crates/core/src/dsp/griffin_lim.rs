use alloc::vec::Vec;

use num_complex::Complex64;

use super::fft::FftPlan;
use super::stft::{istft_samples, stft_frames, ComplexSpectrogram, LogSpectrogram, StftConfig};
use super::DspError;
use crate::audio::AudioClip;

pub const DEFAULT_ITERATIONS: usize = 60;

#[derive(Debug, Clone)]
pub struct GriffinLimResult {
    pub clip: AudioClip,
    /// Spectral convergence after each iteration.
    pub errors: Vec<f64>,
}

/// Momentum applied to consistent estimates between projections.
pub const MOMENTUM: f64 = 0.99;

struct Projector<'a> {
    cfg: StftConfig,
    frames: usize,
    plan: FftPlan,
    window: Vec<f64>,
    target: &'a [f64],
    target_norm: f64,
}

impl Projector<'_> {
    /// Imposes the target magnitude on `phase_of`, resynthesizes, and
    /// re-analyses. Returns the consistent grid, its samples, and its
    /// spectral convergence.
    fn project(&self, phase_of: &[Complex64]) -> (Vec<Complex64>, Vec<f64>, f64) {
        let grid = ComplexSpectrogram {
            bins: self.cfg.bins(),
            frames: self.frames,
            data: phase_of
                .iter()
                .zip(self.target)
                .map(|(c, &m)| {
                    let norm = c.norm();
                    if norm > 0.0 {
                        *c * (m / norm)
                    } else {
                        Complex64::new(m, 0.0)
                    }
                })
                .collect(),
            config: self.cfg,
        };
        let samples = istft_samples(&grid, &self.plan, &self.window);
        let analysed = stft_frames(&samples, &self.cfg, self.frames, &self.plan, &self.window);
        let diff: f64 = analysed
            .data
            .iter()
            .zip(self.target)
            .map(|(s, &m)| (s.norm() - m) * (s.norm() - m))
            .sum();
        (analysed.data, samples, libm::sqrt(diff) / self.target_norm)
    }
}

/// Phase retrieval from a log-magnitude grid, starting from zero phase.
///
/// Each iteration imposes the target magnitude on the current estimate,
/// synthesizes, and re-analyses. Successive consistent grids are
/// extrapolated with [`MOMENTUM`]; an extrapolated step that would raise the
/// error is replaced by a plain projection of the previous grid, so the
/// error sequence never increases. `errors[i]` is the spectral convergence
/// `||S_i| - M|_F / |M|_F` after iteration `i`; the returned clip is the
/// one scored by the final entry.
pub fn griffin_lim(mag: &LogSpectrogram, iterations: usize) -> Result<GriffinLimResult, DspError> {
    if iterations == 0 {
        return Err(DspError::Config("griffin-lim needs at least one iteration"));
    }
    let cfg = mag.config;
    cfg.validate()?;
    mag.ensure_shape(cfg.bins(), mag.frames)?;
    let target = mag.magnitudes();
    let p = Projector {
        cfg,
        frames: mag.frames,
        plan: FftPlan::new(cfg.fft_size),
        window: cfg.window(),
        target_norm: libm::sqrt(target.iter().map(|m| m * m).sum::<f64>()).max(f64::MIN_POSITIVE),
        target: &target,
    };

    let zero_phase: Vec<Complex64> = target.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let (mut current, mut samples, first) = p.project(&zero_phase);
    let mut errors = Vec::with_capacity(iterations);
    errors.push(first);
    let mut lookahead = current.clone();
    for _ in 1..iterations {
        let last = errors[errors.len() - 1];
        let (mut next, mut next_samples, mut err) = p.project(&lookahead);
        if err > last {
            (next, next_samples, err) = p.project(&current);
            lookahead.clone_from(&next);
        } else {
            for ((l, n), c) in lookahead.iter_mut().zip(&next).zip(&current) {
                *l = *n + (*n - *c) * MOMENTUM;
            }
        }
        current = next;
        samples = next_samples;
        errors.push(err);
    }
    Ok(GriffinLimResult {
        clip: AudioClip {
            samples,
            sample_rate: cfg.sample_rate,
        },
        errors,
    })
}
