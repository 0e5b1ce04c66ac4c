//! Synthetic dry signals for the bundled desk-scale corpus.
//!
//! Every generator leaves silent gaps between events so that a room's
//! reverberant tail is visible in the wet signal.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{peak_normalize, AudioClip, SAMPLE_RATE};

const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DryKind {
    /// Gated harmonic tone with vibrato at a fixed fundamental.
    Tone,
    /// Band-pass filtered noise bursts.
    Noise,
    /// Exponential sine sweeps.
    Chirp,
    /// Karplus-Strong plucked strings.
    Pluck,
}

impl DryKind {
    pub const ALL: [DryKind; 4] = [DryKind::Tone, DryKind::Noise, DryKind::Chirp, DryKind::Pluck];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tone" => Some(DryKind::Tone),
            "noise" => Some(DryKind::Noise),
            "chirp" => Some(DryKind::Chirp),
            "pluck" => Some(DryKind::Pluck),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DryKind::Tone => "tone",
            DryKind::Noise => "noise",
            DryKind::Chirp => "chirp",
            DryKind::Pluck => "pluck",
        }
    }
}

/// Synthesizes `samples` samples at 16 kHz, peak-normalized to 0.9.
///
/// `tone_freq` fixes the tone fundamental; other kinds ignore it.
pub fn synth_dry<R: Rng + ?Sized>(
    kind: DryKind,
    samples: usize,
    tone_freq: Option<f64>,
    rng: &mut R,
) -> AudioClip {
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0; samples];
    match kind {
        DryKind::Tone => {
            let f0 = tone_freq.unwrap_or_else(|| rng.random_range(110.0..880.0));
            let vib_rate = rng.random_range(4.0..6.5);
            let vib_depth = rng.random_range(0.002..0.006);
            let harmonics = rng.random_range(3..8);
            let mut phase = [0.0f64; 8];
            let mut t0 = 0usize;
            while t0 < samples {
                let note = (rng.random_range(0.25..0.9) * fs) as usize;
                let gap = (rng.random_range(0.1..0.6) * fs) as usize;
                for i in 0..note.min(samples - t0) {
                    let t = (t0 + i) as f64 / fs;
                    let f = f0 * (1.0 + vib_depth * libm::sin(2.0 * PI * vib_rate * t));
                    let env = adsr(i, note, fs);
                    let mut v = 0.0;
                    for (k, ph) in phase.iter_mut().enumerate().take(harmonics) {
                        let h = (k + 1) as f64;
                        *ph += 2.0 * PI * f * h / fs;
                        v += libm::sin(*ph) / h;
                    }
                    out[t0 + i] = env * v;
                }
                t0 += note + gap;
            }
        }
        DryKind::Noise => {
            let mut t0 = (rng.random_range(0.0..0.3) * fs) as usize;
            while t0 < samples {
                let burst = (rng.random_range(0.05..0.3) * fs) as usize;
                let gap = (rng.random_range(0.2..0.8) * fs) as usize;
                let centre = libm::exp(rng.random_range(libm::log(200.0)..libm::log(5000.0)));
                let mut filter = Biquad::bandpass(centre, rng.random_range(0.7..4.0), fs);
                for i in 0..burst.min(samples - t0) {
                    let n: f64 = StandardNormal.sample(rng);
                    let env = libm::sin(PI * i as f64 / burst as f64);
                    out[t0 + i] = env * filter.process(n);
                }
                t0 += burst + gap;
            }
        }
        DryKind::Chirp => {
            let mut t0 = 0usize;
            while t0 < samples {
                let len = rng.random_range(0.4..1.2);
                let n = (len * fs) as usize;
                let gap = (rng.random_range(0.15..0.6) * fs) as usize;
                let (f_lo, f_hi) = (rng.random_range(80.0..400.0), rng.random_range(1500.0..6000.0));
                let (f_start, f_end) = if rng.random_bool(0.5) { (f_lo, f_hi) } else { (f_hi, f_lo) };
                let k = libm::log(f_end / f_start) / len;
                for i in 0..n.min(samples - t0) {
                    let t = i as f64 / fs;
                    let phase = 2.0 * PI * f_start * (libm::exp(k * t) - 1.0) / k;
                    out[t0 + i] = adsr(i, n, fs) * libm::sin(phase);
                }
                t0 += n + gap;
            }
        }
        DryKind::Pluck => {
            let mut t0 = 0usize;
            while t0 < samples {
                let f0 = rng.random_range(80.0..700.0);
                let period = (fs / f0) as usize;
                let len = (rng.random_range(0.3..1.0) * fs) as usize;
                let gap = (rng.random_range(0.1..0.5) * fs) as usize;
                let decay = rng.random_range(0.990..0.998);
                let mut line: VecDeque<f64> = (0..period).map(|_| rng.random_range(-1.0..1.0)).collect();
                for i in 0..len.min(samples - t0) {
                    let a = line.pop_front().unwrap_or(0.0);
                    let b = line.front().copied().unwrap_or(0.0);
                    line.push_back(decay * 0.5 * (a + b));
                    // short release so the pluck ends in silence
                    let tail = len - i;
                    let fade = if tail < 320 { tail as f64 / 320.0 } else { 1.0 };
                    out[t0 + i] = a * fade;
                }
                t0 += len + gap;
            }
        }
    }
    let clip = AudioClip {
        samples: out,
        sample_rate: SAMPLE_RATE,
    };
    peak_normalize(&clip, PEAK).unwrap_or(clip)
}

/// Linear attack (10 ms) and release (30 ms) envelope.
fn adsr(i: usize, len: usize, fs: f64) -> f64 {
    let attack = (0.01 * fs) as usize;
    let release = (0.03 * fs) as usize;
    if i < attack {
        i as f64 / attack as f64
    } else if len - i < release {
        (len - i) as f64 / release as f64
    } else {
        1.0
    }
}

struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn bandpass(centre: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * centre / fs;
        let alpha = libm::sin(w) / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * libm::cos(w) / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// `count` dry clips cycling through the four kinds.
pub fn bundled_corpus<R: Rng + ?Sized>(count: usize, samples: usize, rng: &mut R) -> Vec<AudioClip> {
    (0..count)
        .map(|i| synth_dry(DryKind::ALL[i % DryKind::ALL.len()], samples, None, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_kind_is_finite_and_normalized() {
        for kind in DryKind::ALL {
            let clip = synth_dry(kind, 32_000, None, &mut ChaCha8Rng::seed_from_u64(4));
            assert_eq!(clip.len(), 32_000);
            assert!(clip.samples.iter().all(|v| v.is_finite()));
            assert!((clip.peak() - PEAK).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        for kind in DryKind::ALL {
            let a = synth_dry(kind, 8000, None, &mut ChaCha8Rng::seed_from_u64(8));
            let b = synth_dry(kind, 8000, None, &mut ChaCha8Rng::seed_from_u64(8));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn signals_contain_silent_gaps() {
        for kind in DryKind::ALL {
            let clip = synth_dry(kind, 48_000, None, &mut ChaCha8Rng::seed_from_u64(2));
            let silent = clip.samples.windows(800).step_by(400).any(|w| w.iter().all(|v| v.abs() < 1e-6));
            assert!(silent, "{kind:?} has no gap");
        }
    }
}
