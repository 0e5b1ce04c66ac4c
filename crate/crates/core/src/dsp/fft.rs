//! Iterative radix-2 FFT.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed twiddles and bit-reversal table for one power-of-two size.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    reversed: Vec<u32>,
}

impl FftPlan {
    /// Panics unless `n` is a power of two.
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "FFT size {n} is not a power of two");
        let twiddles = (0..n / 2)
            .map(|k| {
                let phase = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(phase), libm::sin(phase))
            })
            .collect();
        let bits = n.trailing_zeros();
        let reversed = (0..n as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Self {
            n,
            twiddles,
            reversed,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Inverse transform including the 1/n scale.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n, "buffer length does not match plan");
        for i in 0..n {
            let j = self.reversed[i] as usize;
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}
