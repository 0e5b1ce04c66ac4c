use super::stft::LogSpectrogram;
use super::DspError;

/// Sum over frames of the largest absolute deviation across frequency.
pub fn minmax_loss(target: &LogSpectrogram, predicted: &LogSpectrogram) -> Result<f64, DspError> {
    predicted.ensure_shape(target.bins, target.frames)?;
    let mut worst = alloc::vec![0.0f64; target.frames];
    for b in 0..target.bins {
        let row = b * target.frames;
        for (f, w) in worst.iter_mut().enumerate() {
            let d = (target.data[row + f] as f64 - predicted.data[row + f] as f64).abs();
            if d > *w {
                *w = d;
            }
        }
    }
    Ok(worst.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use alloc::vec;

    fn grid(frames: usize, data: alloc::vec::Vec<f32>) -> LogSpectrogram {
        let cfg = StftConfig {
            fft_size: 2,
            hop: 1,
            ..StftConfig::default()
        };
        LogSpectrogram::new(2, frames, data, cfg).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let a = grid(2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(minmax_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_hand_case() {
        // bin-major; frame 0 deviations (0, 0), frame 1 deviations (1, 3)
        let t = grid(2, vec![0.0, 1.0, 0.0, 3.0]);
        let p = grid(2, vec![0.0, 0.0, 0.0, 0.0]);
        assert_eq!(minmax_loss(&t, &p).unwrap(), 3.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = grid(2, vec![0.0; 4]);
        let b = grid(1, vec![0.0; 2]);
        assert!(minmax_loss(&a, &b).is_err());
    }
}
