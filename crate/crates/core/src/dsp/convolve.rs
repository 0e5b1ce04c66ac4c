use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::fft::FftPlan;
use super::DspError;
use crate::audio::{AudioClip, AudioError};

/// Input block length for overlap-add.
pub const BLOCK: usize = 4096;

/// Overlap-add FFT convolver with a precomputed kernel spectrum.
///
/// Blocks are transformed in pairs packed as real and imaginary parts; the
/// kernel is real, so the two products separate exactly after the inverse.
#[derive(Debug, Clone)]
pub struct FftConvolver {
    kernel_len: usize,
    sample_rate: u32,
    plan: FftPlan,
    kernel: Vec<Complex64>,
}

impl FftConvolver {
    pub fn new(h: &AudioClip) -> Result<Self, DspError> {
        if h.is_empty() {
            return Err(AudioError::Empty.into());
        }
        let size = (BLOCK + h.len() - 1).next_power_of_two();
        let plan = FftPlan::new(size);
        let mut kernel = vec![Complex64::new(0.0, 0.0); size];
        for (k, &v) in kernel.iter_mut().zip(&h.samples) {
            k.re = v;
        }
        plan.forward(&mut kernel);
        Ok(Self {
            kernel_len: h.len(),
            sample_rate: h.sample_rate,
            plan,
            kernel,
        })
    }

    /// Full linear convolution, `len(x) + len(h) - 1` samples.
    pub fn apply(&self, x: &AudioClip) -> Result<AudioClip, DspError> {
        if x.is_empty() {
            return Err(AudioError::Empty.into());
        }
        x.check_rate(self.sample_rate)?;
        let size = self.plan.len();
        let out_len = x.len() + self.kernel_len - 1;
        let mut out = vec![0.0; out_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        let blocks: Vec<&[f64]> = x.samples.chunks(BLOCK).collect();
        for (pair, chunk) in blocks.chunks(2).enumerate() {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (slot, &s) in buf.iter_mut().zip(chunk[0]) {
                slot.re = s;
            }
            if let Some(second) = chunk.get(1) {
                for (slot, &s) in buf.iter_mut().zip(*second) {
                    slot.im = s;
                }
            }
            self.plan.forward(&mut buf);
            for (v, k) in buf.iter_mut().zip(&self.kernel) {
                *v *= k;
            }
            self.plan.inverse(&mut buf);
            let start = 2 * pair * BLOCK;
            let valid = chunk[0].len() + self.kernel_len - 1;
            for (o, v) in out[start..].iter_mut().zip(&buf[..valid]) {
                *o += v.re;
            }
            if let Some(second) = chunk.get(1) {
                let valid = second.len() + self.kernel_len - 1;
                for (o, v) in out[start + BLOCK..].iter_mut().zip(&buf[..valid]) {
                    *o += v.im;
                }
            }
        }
        Ok(AudioClip {
            samples: out,
            sample_rate: self.sample_rate,
        })
    }
}

/// `x * h` by FFT overlap-add.
pub fn convolve(x: &AudioClip, h: &AudioClip) -> Result<AudioClip, DspError> {
    if x.sample_rate != h.sample_rate {
        return Err(AudioError::RateMismatch {
            expected: x.sample_rate,
            found: h.sample_rate,
        }
        .into());
    }
    FftConvolver::new(h)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn clip(s: &[f64]) -> AudioClip {
        AudioClip::new(s.to_vec(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn delta_response() {
        let y = convolve(&clip(&[1.0, 0.0, 0.0]), &clip(&[1.0, 0.5])).unwrap();
        let expected = [1.0, 0.5, 0.0, 0.0];
        assert_eq!(y.len(), 4);
        for (a, b) in y.samples.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_impulse_is_identity() {
        let x: Vec<f64> = (0..9000).map(|i| libm::sin(i as f64 * 0.01)).collect();
        let mut h = vec![0.0; 5];
        h[0] = 1.0;
        let y = convolve(&clip(&x), &clip(&h)).unwrap();
        assert_eq!(y.len(), x.len() + 4);
        for (i, v) in y.samples.iter().enumerate() {
            let want = x.get(i).copied().unwrap_or(0.0);
            assert!((v - want).abs() < 1e-9);
        }
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let x = clip(&[1.0]);
        let h = AudioClip::new(vec![1.0], 8000).unwrap();
        assert!(convolve(&x, &h).is_err());
    }
}
