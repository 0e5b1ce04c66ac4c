//! Parametric synthetic room impulse responses.
//!
//! Two generators: a shoebox image-source model with frequency-independent
//! wall absorption, and an exponentially decaying Gaussian noise tail.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{peak_normalize, AudioClip, SAMPLE_RATE};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const IR_PEAK: f64 = 0.99;
pub const DEFAULT_IR_LEN: usize = 24_000;
pub const DEFAULT_MAX_ORDER: u32 = 20;
pub const MAX_ORDER_LIMIT: u32 = 40;
/// `ln(1000)`: amplitude falls by 60 dB of energy at `t = rt60`.
const DECAY_60DB: f64 = 6.907_755_278_982_137;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RirError {
    #[error("room dimension {axis} is {value} m; must be positive and finite")]
    Dimension { axis: usize, value: f64 },
    #[error("absorption of surface {surface} is {value}; must lie in (0, 1]")]
    Absorption { surface: usize, value: f64 },
    #[error("{which} position {pos:?} is not strictly inside the room")]
    Outside { which: &'static str, pos: [f64; 3] },
    #[error("source and receiver coincide")]
    Coincident,
    #[error("max_order {0} exceeds the limit of 40")]
    Order(u32),
    #[error("impulse response length and sample rate must be positive")]
    Length,
    #[error("rt60 must be positive and finite, got {0}")]
    Rt60(f64),
    #[error("impulse response is silent")]
    Silent,
}

/// Shoebox room with one absorption coefficient per surface.
///
/// Surfaces are ordered `[x=0, x=Lx, y=0, y=Ly, z=0, z=Lz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub absorption: [f64; 6],
    pub source: [f64; 3],
    pub receiver: [f64; 3],
    pub max_order: u32,
    pub sample_rate: u32,
    pub length: usize,
}

impl RoomSpec {
    /// Room with uniform absorption and default order, rate and length.
    pub fn uniform(dims: [f64; 3], alpha: f64, source: [f64; 3], receiver: [f64; 3]) -> Self {
        Self {
            dims,
            absorption: [alpha; 6],
            source,
            receiver,
            max_order: DEFAULT_MAX_ORDER,
            sample_rate: SAMPLE_RATE,
            length: DEFAULT_IR_LEN,
        }
    }

    pub fn validate(&self) -> Result<(), RirError> {
        for (axis, &value) in self.dims.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(RirError::Dimension { axis, value });
            }
        }
        for (surface, &value) in self.absorption.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(RirError::Absorption { surface, value });
            }
        }
        for (which, pos) in [("source", self.source), ("receiver", self.receiver)] {
            let inside = pos
                .iter()
                .zip(&self.dims)
                .all(|(&p, &d)| p.is_finite() && p > 0.0 && p < d);
            if !inside {
                return Err(RirError::Outside { which, pos });
            }
        }
        if self.source_receiver_distance() == 0.0 {
            return Err(RirError::Coincident);
        }
        if self.max_order > MAX_ORDER_LIMIT {
            return Err(RirError::Order(self.max_order));
        }
        if self.length == 0 || self.sample_rate == 0 {
            return Err(RirError::Length);
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    /// Surface areas in the same order as `absorption`.
    pub fn surface_areas(&self) -> [f64; 6] {
        let [lx, ly, lz] = self.dims;
        [ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly]
    }

    pub fn source_receiver_distance(&self) -> f64 {
        distance(self.source, self.receiver)
    }

    /// Sample index of the direct path.
    pub fn direct_delay(&self) -> usize {
        delay_samples(self.source_receiver_distance(), self.sample_rate)
    }
}

/// Rendered impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomIr {
    pub clip: AudioClip,
    /// Geometry, when produced by the image-source model.
    pub spec: Option<RoomSpec>,
    pub rt60_nominal: f64,
    /// Image sources whose delay fell beyond the response length.
    pub truncated: usize,
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    libm::sqrt(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn delay_samples(dist: f64, sample_rate: u32) -> usize {
    libm::round(dist * sample_rate as f64 / SPEED_OF_SOUND) as usize
}

/// Sabine reverberation time `0.161 V / sum(S_i a_i)` in seconds.
pub fn sabine_rt60(room: &RoomSpec) -> Result<f64, RirError> {
    room.validate()?;
    let absorption_area: f64 = room
        .surface_areas()
        .iter()
        .zip(&room.absorption)
        .map(|(s, a)| s * a)
        .sum();
    Ok(0.161 * room.volume() / absorption_area)
}

/// One image source: tap position and amplitude before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageTap {
    pub order: u32,
    pub delay: usize,
    pub amplitude: f64,
}

/// Enumerates image sources up to `room.max_order` in a fixed order.
pub fn image_sources(room: &RoomSpec) -> Result<Vec<ImageTap>, RirError> {
    room.validate()?;
    let n = room.max_order as i64;
    let beta: Vec<f64> = room.absorption.iter().map(|a| libm::sqrt(1.0 - a)).collect();
    let mut taps = Vec::new();
    // Per axis: image coordinate (1 - 2u) s + 2 l L hits the low wall
    // |l - u| times and the high wall |l| times.
    let axis_images = |axis: usize| {
        let mut out = Vec::new();
        for l in -n..=n {
            for u in 0..2i64 {
                let low = (l - u).unsigned_abs() as u32;
                let high = l.unsigned_abs() as u32;
                if low + high > room.max_order {
                    continue;
                }
                let coord = (1 - 2 * u) as f64 * room.source[axis] + 2.0 * l as f64 * room.dims[axis];
                let gain = powu(beta[2 * axis], low) * powu(beta[2 * axis + 1], high);
                out.push((coord - room.receiver[axis], low + high, gain));
            }
        }
        out
    };
    let xs = axis_images(0);
    let ys = axis_images(1);
    let zs = axis_images(2);
    for &(dx, ox, gx) in &xs {
        for &(dy, oy, gy) in &ys {
            if ox + oy > room.max_order {
                continue;
            }
            for &(dz, oz, gz) in &zs {
                let order = ox + oy + oz;
                if order > room.max_order {
                    continue;
                }
                let d = libm::sqrt(dx * dx + dy * dy + dz * dz);
                taps.push(ImageTap {
                    order,
                    delay: delay_samples(d, room.sample_rate),
                    amplitude: gx * gy * gz / d,
                });
            }
        }
    }
    Ok(taps)
}

fn powu(base: f64, exp: u32) -> f64 {
    libm::pow(base, exp as f64)
}

/// Shoebox image-source impulse response, peak-normalized to 0.99.
pub fn image_source_rir(room: &RoomSpec) -> Result<RoomIr, RirError> {
    let taps = image_sources(room)?;
    let mut h = vec![0.0; room.length];
    let mut truncated = 0;
    for tap in &taps {
        match h.get_mut(tap.delay) {
            Some(slot) => *slot += tap.amplitude,
            None => truncated += 1,
        }
    }
    let clip = AudioClip {
        samples: h,
        sample_rate: room.sample_rate,
    };
    let clip = peak_normalize(&clip, IR_PEAK).map_err(|_| RirError::Silent)?;
    Ok(RoomIr {
        clip,
        spec: Some(room.clone()),
        rt60_nominal: sabine_rt60(room)?,
        truncated,
    })
}

/// Gaussian noise under an `exp(-ln(1000) t / rt60)` envelope.
pub fn noise_decay_rir<R: Rng + ?Sized>(
    rt60: f64,
    sample_rate: u32,
    length: usize,
    rng: &mut R,
) -> Result<RoomIr, RirError> {
    if !(rt60.is_finite() && rt60 > 0.0) {
        return Err(RirError::Rt60(rt60));
    }
    if length == 0 || sample_rate == 0 {
        return Err(RirError::Length);
    }
    let samples = (0..length)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let noise: f64 = StandardNormal.sample(rng);
            noise * decay_envelope(t, rt60)
        })
        .collect();
    let clip = AudioClip {
        samples,
        sample_rate,
    };
    let clip = peak_normalize(&clip, IR_PEAK).map_err(|_| RirError::Silent)?;
    Ok(RoomIr {
        clip,
        spec: None,
        rt60_nominal: rt60,
        truncated: 0,
    })
}

/// Amplitude envelope of [`noise_decay_rir`].
pub fn decay_envelope(t: f64, rt60: f64) -> f64 {
    libm::exp(-DECAY_60DB * t / rt60)
}

/// Schroeder backward-integrated energy decay curve in dB re. total energy.
pub fn energy_decay_db(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| {
            if total > 0.0 && e > 0.0 {
                10.0 * libm::log10(e / total)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// RT60 from a least-squares line through the decay curve between
/// `start_db` and `end_db` (both negative, `start_db > end_db`).
pub fn measure_rt60(clip: &AudioClip, start_db: f64, end_db: f64) -> Option<f64> {
    let edc = energy_decay_db(&clip.samples);
    let fs = clip.sample_rate as f64;
    let points: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .skip_while(|(_, &db)| db > start_db)
        .take_while(|(_, &db)| db >= end_db)
        .map(|(i, &db)| (i as f64 / fs, db))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_db = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_db)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.0 - mean_t)).sum();
    let slope = cov / var;
    (slope < 0.0).then(|| -60.0 / slope)
}

/// T20-style estimate: fit between -5 dB and -25 dB.
pub fn schroeder_rt60(clip: &AudioClip) -> Option<f64> {
    measure_rt60(clip, -5.0, -25.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// Side and height ranges in meters.
    pub fn bounds(self) -> ([f64; 2], [f64; 2]) {
        match self {
            SizeClass::Small => ([3.0, 6.0], [2.5, 4.0]),
            SizeClass::Medium => ([6.0, 15.0], [3.0, 6.0]),
            SizeClass::Large => ([15.0, 40.0], [5.0, 15.0]),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "small" => Some(SizeClass::Small),
            "medium" => Some(SizeClass::Medium),
            "large" => Some(SizeClass::Large),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

pub const ABSORPTION_RANGE: [f64; 2] = [0.05, 0.6];
pub const WALL_CLEARANCE: f64 = 0.5;
pub const MIN_SEPARATION: f64 = 0.3;

/// Draws a random room of the given size class.
pub fn sample_room<R: Rng + ?Sized>(rng: &mut R, size_class: SizeClass) -> RoomSpec {
    let (side, height) = size_class.bounds();
    let dims = [
        rng.random_range(side[0]..=side[1]),
        rng.random_range(side[0]..=side[1]),
        rng.random_range(height[0]..=height[1]),
    ];
    let mut absorption = [0.0; 6];
    for a in absorption.iter_mut() {
        *a = rng.random_range(ABSORPTION_RANGE[0]..=ABSORPTION_RANGE[1]);
    }
    let point = |rng: &mut R| {
        let mut p = [0.0; 3];
        for (c, &d) in p.iter_mut().zip(&dims) {
            *c = rng.random_range(WALL_CLEARANCE..=d - WALL_CLEARANCE);
        }
        p
    };
    let source = point(rng);
    let receiver = loop {
        let r = point(rng);
        if distance(source, r) >= MIN_SEPARATION {
            break r;
        }
    };
    RoomSpec {
        dims,
        absorption,
        source,
        receiver,
        max_order: DEFAULT_MAX_ORDER,
        sample_rate: SAMPLE_RATE,
        length: DEFAULT_IR_LEN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shoebox(alpha: f64) -> RoomSpec {
        RoomSpec::uniform([5.0, 4.0, 3.0], alpha, [1.0, 1.0, 1.5], [3.5, 2.5, 1.2])
    }

    #[test]
    fn sabine_hand_values() {
        // 0.161 * 60 / (94 * alpha)
        assert!((sabine_rt60(&shoebox(0.3)).unwrap() - 0.342_553).abs() < 1e-5);
        assert!((sabine_rt60(&shoebox(1.0)).unwrap() - 0.102_766).abs() < 1e-5);
    }

    #[test]
    fn sabine_scales_linearly_with_size() {
        let a = shoebox(0.4);
        let mut b = a.clone();
        for v in b.dims.iter_mut().chain(b.source.iter_mut()).chain(b.receiver.iter_mut()) {
            *v *= 2.0;
        }
        let ra = sabine_rt60(&a).unwrap();
        let rb = sabine_rt60(&b).unwrap();
        assert!((rb - 2.0 * ra).abs() < 1e-12);
    }

    #[test]
    fn full_absorption_leaves_direct_path() {
        let room = shoebox(1.0);
        let ir = image_source_rir(&room).unwrap();
        let nonzero: Vec<usize> = (0..ir.clip.len()).filter(|&i| ir.clip.samples[i] != 0.0).collect();
        assert_eq!(nonzero, vec![room.direct_delay()]);
    }

    #[test]
    fn direct_delay_hand_value() {
        // 3.43 m at 16 kHz -> 3.43 * 16000 / 343 = 160 samples
        let room = RoomSpec::uniform([10.0, 10.0, 10.0], 0.5, [2.0, 5.0, 5.0], [5.43, 5.0, 5.0]);
        assert_eq!(room.direct_delay(), 160);
        let ir = image_source_rir(&room).unwrap();
        let first = ir.clip.samples.iter().position(|&v| v != 0.0).unwrap();
        assert_eq!(first, 160);
    }

    #[test]
    fn rejects_invalid_geometry() {
        let mut room = shoebox(0.3);
        room.source = [6.0, 1.0, 1.0];
        assert!(matches!(room.validate(), Err(RirError::Outside { .. })));
        room.source = room.receiver;
        assert_eq!(room.validate(), Err(RirError::Coincident));
        let mut room = shoebox(0.3);
        room.absorption[2] = 0.0;
        assert!(matches!(room.validate(), Err(RirError::Absorption { surface: 2, .. })));
        room.absorption[2] = 0.5;
        room.max_order = 41;
        assert_eq!(room.validate(), Err(RirError::Order(41)));
    }

    #[test]
    fn truncated_images_are_counted() {
        let mut room = shoebox(0.2);
        room.length = 200;
        let ir = image_source_rir(&room).unwrap();
        assert!(ir.truncated > 0);
        assert_eq!(ir.clip.len(), 200);
    }

    #[test]
    fn outputs_are_normalized() {
        let ir = image_source_rir(&shoebox(0.3)).unwrap();
        assert!((ir.clip.peak() - IR_PEAK).abs() < 1e-12);
        assert!(ir.clip.samples.iter().all(|v| v.is_finite()));
        let noise = noise_decay_rir(0.5, SAMPLE_RATE, 8000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!((noise.clip.peak() - IR_PEAK).abs() < 1e-12);
    }

    #[test]
    fn envelope_at_rt60() {
        let ratio = decay_envelope(0.7, 0.7) / decay_envelope(0.0, 0.7);
        assert!((ratio - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn noise_rir_is_deterministic() {
        let a = noise_decay_rir(0.4, SAMPLE_RATE, 4000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = noise_decay_rir(0.4, SAMPLE_RATE, 4000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(noise_decay_rir(0.0, SAMPLE_RATE, 10, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    #[test]
    fn sampled_rooms_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let room = sample_room(&mut rng, SizeClass::Small);
            assert!(room.dims[..2].iter().all(|d| (3.0..=6.0).contains(d)));
            assert!((2.5..=4.0).contains(&room.dims[2]));
            assert!(room.source_receiver_distance() >= MIN_SEPARATION);
            assert!(room.validate().is_ok());
        }
        let a = sample_room(&mut ChaCha8Rng::seed_from_u64(1), SizeClass::Large);
        let b = sample_room(&mut ChaCha8Rng::seed_from_u64(1), SizeClass::Large);
        assert_eq!(a, b);
    }
}

