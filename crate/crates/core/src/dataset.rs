//! Training and evaluation examples built from dry clips and impulse
//! responses: transfer triplets and same/different-space pairs.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{random_gain, AudioClip, AudioError};
use crate::dsp::{patch_log_spectrogram, DspError, FftConvolver, LogSpectrogram, StftConfig};
use crate::rir::RoomIr;

/// Patch length in seconds.
pub const PATCH_SECS: f64 = 3.0;
pub const DEFAULT_GAIN_RANGE: (f64, f64) = (0.1, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("input and target impulse responses must differ (both {0})")]
    SameRir(String),
    #[error("input and conditioning audio must differ (both {0})")]
    SameAudio(String),
    #[error("pool needs at least {need} {what}, has {have}")]
    Pool {
        what: &'static str,
        need: usize,
        have: usize,
    },
}

/// Derives an independent child seed; splitmix64 finalizer over the inputs.
pub fn child_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dry clip with a stable content identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedClip {
    pub id: String,
    pub clip: AudioClip,
}

/// Impulse response with its identifier and a ready convolver.
#[derive(Debug, Clone)]
pub struct NamedRir {
    pub id: String,
    pub ir: RoomIr,
    convolver: FftConvolver,
}

impl NamedRir {
    pub fn new(id: impl Into<String>, ir: RoomIr) -> Result<Self, DatasetError> {
        let convolver = FftConvolver::new(&ir.clip)?;
        Ok(Self {
            id: id.into(),
            ir,
            convolver,
        })
    }

    /// `x * h`, full length.
    pub fn apply(&self, x: &AudioClip) -> Result<AudioClip, DatasetError> {
        Ok(self.convolver.apply(x)?)
    }
}

/// Knobs shared by the example builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleConfig {
    pub stft: StftConfig,
    pub gain_lo: f64,
    pub gain_hi: f64,
    pub patch_secs: f64,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            gain_lo: DEFAULT_GAIN_RANGE.0,
            gain_hi: DEFAULT_GAIN_RANGE.1,
            patch_secs: PATCH_SECS,
        }
    }
}

impl ExampleConfig {
    pub fn patch_len(&self) -> usize {
        libm::round(self.patch_secs * self.stft.sample_rate as f64) as usize
    }

    /// Wet signal to spectrogram: random gain, then fixed 300-frame analysis.
    fn render<R: Rng + ?Sized>(
        &self,
        wet: &AudioClip,
        rng: &mut R,
    ) -> Result<LogSpectrogram, DatasetError> {
        let span = self.stft.span_of(crate::dsp::PATCH_FRAMES);
        let gained = random_gain(&wet.fit_to(span), rng, self.gain_lo, self.gain_hi)?;
        Ok(patch_log_spectrogram(&gained, &self.stft)?)
    }
}

/// Uniformly placed contiguous patch of `round(duration * fs)` samples.
pub fn random_patch<R: Rng + ?Sized>(
    clip: &AudioClip,
    duration: f64,
    rng: &mut R,
) -> Result<(usize, AudioClip), AudioError> {
    let len = libm::round(duration * clip.sample_rate as f64) as usize;
    if len == 0 || clip.len() < len {
        return Err(AudioError::TooShort {
            have: clip.len(),
            need: len.max(1),
        });
    }
    let offset = rng.random_range(0..=clip.len() - len);
    Ok((offset, patch_at(clip, offset, len)))
}

pub fn patch_at(clip: &AudioClip, offset: usize, len: usize) -> AudioClip {
    AudioClip {
        samples: clip.samples[offset..offset + len].to_vec(),
        sample_rate: clip.sample_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferIds {
    pub audio_a: String,
    pub audio_b: String,
    pub rir_i: String,
    pub rir_j: String,
}

/// Input `X_a^i`, conditioning `X_b^j`, and target `X_a^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferExample {
    pub input_spec: LogSpectrogram,
    pub cond_spec: LogSpectrogram,
    pub target_spec: LogSpectrogram,
    pub ids: TransferIds,
    /// Patch offsets into `audio_a` and `audio_b`.
    pub offsets: (usize, usize),
}

/// Renders one transfer triplet. Random draws happen in a fixed order:
/// patch a, patch b, input gain, target gain, conditioning gain.
pub fn build_transfer_example<R: Rng + ?Sized>(
    audio_a: &NamedClip,
    audio_b: &NamedClip,
    rir_i: &NamedRir,
    rir_j: &NamedRir,
    cfg: &ExampleConfig,
    rng: &mut R,
) -> Result<TransferExample, DatasetError> {
    if rir_i.id == rir_j.id {
        return Err(DatasetError::SameRir(rir_i.id.clone()));
    }
    if audio_a.id == audio_b.id {
        return Err(DatasetError::SameAudio(audio_a.id.clone()));
    }
    let (offset_a, patch_a) = random_patch(&audio_a.clip, cfg.patch_secs, rng)?;
    let (offset_b, patch_b) = random_patch(&audio_b.clip, cfg.patch_secs, rng)?;
    let input_spec = cfg.render(&rir_i.apply(&patch_a)?, rng)?;
    let target_spec = cfg.render(&rir_j.apply(&patch_a)?, rng)?;
    let cond_spec = cfg.render(&rir_j.apply(&patch_b)?, rng)?;
    Ok(TransferExample {
        input_spec,
        cond_spec,
        target_spec,
        ids: TransferIds {
            audio_a: audio_a.id.clone(),
            audio_b: audio_b.id.clone(),
            rir_i: rir_i.id.clone(),
            rir_j: rir_j.id.clone(),
        },
        offsets: (offset_a, offset_b),
    })
}

/// The four pair constructions. Label 0 = same space, 1 = different.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairKind {
    /// Same patch, same RIR, independent gains and augmentation.
    SameAudioSameRir,
    /// Different content, same RIR.
    DiffAudioSameRir,
    /// Same patch, different RIRs.
    SameAudioDiffRir,
    /// Different content, different RIRs.
    DiffAudioDiffRir,
}

impl PairKind {
    pub fn label(self) -> u8 {
        match self {
            PairKind::SameAudioSameRir | PairKind::DiffAudioSameRir => 0,
            PairKind::SameAudioDiffRir | PairKind::DiffAudioDiffRir => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub spec1: LogSpectrogram,
    pub spec2: LogSpectrogram,
    pub label: u8,
    pub kind: PairKind,
    pub audio: (String, String),
    pub rirs: (String, String),
}

/// Draws label and construction fairly, then renders both sides.
pub fn build_pair_example<R: Rng + ?Sized>(
    clips: &[NamedClip],
    rirs: &[NamedRir],
    cfg: &ExampleConfig,
    augment: &AugmentParams,
    rng: &mut R,
) -> Result<PairExample, DatasetError> {
    if clips.len() < 2 {
        return Err(DatasetError::Pool {
            what: "clips",
            need: 2,
            have: clips.len(),
        });
    }
    if rirs.len() < 2 {
        return Err(DatasetError::Pool {
            what: "impulse responses",
            need: 2,
            have: rirs.len(),
        });
    }
    let kind = draw_pair_kind(rng);
    let same_audio = matches!(kind, PairKind::SameAudioSameRir | PairKind::SameAudioDiffRir);
    let same_space = kind.label() == 0;
    let (c1, c2) = pick_pair(clips, same_audio, rng);
    let (r1, r2) = pick_pair(rirs, same_space, rng);
    let (_, p1) = random_patch(&c1.clip, cfg.patch_secs, rng)?;
    let p2 = if same_audio {
        p1.clone()
    } else {
        random_patch(&c2.clip, cfg.patch_secs, rng)?.1
    };
    let wet1 = r1.apply(&p1)?;
    let wet2 = if same_audio && same_space {
        wet1.clone()
    } else {
        r2.apply(&p2)?
    };
    let spec1 = augment_spectrogram(&cfg.render(&wet1, rng)?, augment, rng);
    let spec2 = augment_spectrogram(&cfg.render(&wet2, rng)?, augment, rng);
    Ok(PairExample {
        spec1,
        spec2,
        label: kind.label(),
        kind,
        audio: (c1.id.clone(), c2.id.clone()),
        rirs: (r1.id.clone(), r2.id.clone()),
    })
}

/// Label first (p = 0.5), then same or different content (p = 0.5).
pub fn draw_pair_kind<R: Rng + ?Sized>(rng: &mut R) -> PairKind {
    let same_space = rng.random_bool(0.5);
    let same_audio = rng.random_bool(0.5);
    match (same_space, same_audio) {
        (true, true) => PairKind::SameAudioSameRir,
        (true, false) => PairKind::DiffAudioSameRir,
        (false, true) => PairKind::SameAudioDiffRir,
        (false, false) => PairKind::DiffAudioDiffRir,
    }
}

/// Two entries of `pool`: the same one twice, or two distinct ones.
/// `pool` must be non-empty, and hold two entries when `same` is false.
pub fn pick_pair<'a, T, R: Rng + ?Sized>(pool: &'a [T], same: bool, rng: &mut R) -> (&'a T, &'a T) {
    let a = rng.random_range(0..pool.len());
    if same {
        return (&pool[a], &pool[a]);
    }
    let mut b = rng.random_range(0..pool.len() - 1);
    if b >= a {
        b += 1;
    }
    (&pool[a], &pool[b])
}

/// Per-augmentation firing probabilities and magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub volume_p: f64,
    /// Log-domain gain range; `ln 0.1 .. 0` by default.
    pub volume_range: (f64, f64),
    pub flip_p: f64,
    pub cutout_p: f64,
    /// Largest cutout extent as a fraction of frames and of bins.
    pub cutout_max_frac: f64,
    pub jitter_p: f64,
    pub jitter_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            volume_p: 0.5,
            volume_range: (libm::log(0.1), 0.0),
            flip_p: 0.5,
            cutout_p: 0.5,
            cutout_max_frac: 0.2,
            jitter_p: 0.5,
            jitter_sigma: 0.1,
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self {
            volume_p: 0.0,
            flip_p: 0.0,
            cutout_p: 0.0,
            jitter_p: 0.0,
            ..Self::default()
        }
    }
}

/// Applies volume shift, time flip, Gaussian jitter and a floor-filled
/// cutout, each independently with its own probability, in that order.
///
/// Volume shifts saturate at the log floor and jitter is truncated at five
/// sigma, so no value ends up below `ln(floor) - 5 sigma`.
pub fn augment_spectrogram<R: Rng + ?Sized>(
    spec: &LogSpectrogram,
    params: &AugmentParams,
    rng: &mut R,
) -> LogSpectrogram {
    let mut out = spec.clone();
    let floor = spec.config.log_floor_ln() as f32;
    if fires(rng, params.volume_p) {
        let (lo, hi) = params.volume_range;
        let shift = if lo < hi { rng.random_range(lo..hi) } else { lo } as f32;
        for v in out.data.iter_mut() {
            *v = (*v + shift).max(floor);
        }
    }
    if fires(rng, params.flip_p) {
        time_flip(&mut out);
    }
    if fires(rng, params.jitter_p) {
        let sigma = params.jitter_sigma;
        for v in out.data.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += (n.clamp(-5.0, 5.0) * sigma) as f32;
        }
    }
    if fires(rng, params.cutout_p) {
        let rect = random_rect(out.bins, out.frames, params.cutout_max_frac, rng);
        fill_rect(&mut out, rect, floor);
    }
    out
}

fn fires<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    p > 0.0 && rng.random_bool(p.min(1.0))
}

/// Reverses the frame order in place.
pub fn time_flip(spec: &mut LogSpectrogram) {
    for b in 0..spec.bins {
        spec.data[b * spec.frames..(b + 1) * spec.frames].reverse();
    }
}

/// Cutout rectangle `(bin_start, bin_len, frame_start, frame_len)`.
pub type Rect = (usize, usize, usize, usize);

fn random_rect<R: Rng + ?Sized>(bins: usize, frames: usize, frac: f64, rng: &mut R) -> Rect {
    let max_b = ((bins as f64 * frac) as usize).max(1);
    let max_f = ((frames as f64 * frac) as usize).max(1);
    let bin_len = rng.random_range(1..=max_b);
    let frame_len = rng.random_range(1..=max_f);
    let bin_start = rng.random_range(0..=bins - bin_len);
    let frame_start = rng.random_range(0..=frames - frame_len);
    (bin_start, bin_len, frame_start, frame_len)
}

pub fn fill_rect(spec: &mut LogSpectrogram, rect: Rect, value: f32) {
    let (b0, nb, f0, nf) = rect;
    for b in b0..b0 + nb {
        for f in f0..f0 + nf {
            *spec.at_mut(b, f) = value;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Splits `0..n` into train/validation/test counts with at least
/// `min_each` items in the held-out splits when `n` allows.
pub fn split_counts(n: usize, held_out_frac: f64, min_each: usize) -> [usize; 3] {
    let mut held = libm::round(n as f64 * held_out_frac) as usize;
    held = held.max(min_each);
    if 2 * held >= n {
        held = n / 3;
    }
    [n - 2 * held, held, held]
}

/// Assigns each of `n` items to a split; items are listed in index order.
pub fn assign_splits(n: usize, held_out_frac: f64, min_each: usize) -> Vec<Split> {
    let counts = split_counts(n, held_out_frac, min_each);
    Split::ALL
        .iter()
        .zip(counts)
        .flat_map(|(s, c)| core::iter::repeat(*s).take(c))
        .collect()
}
