use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomxfer_core::audio::{peak_normalize, random_gain, AudioClip, SAMPLE_RATE};
use roomxfer_core::dataset::{
    augment_spectrogram, build_pair_example, build_transfer_example, patch_at, random_patch, split_counts,
    AugmentParams, ExampleConfig, NamedClip, NamedRir, PairKind,
};
use roomxfer_core::dsp::{convolve, log_magnitude, stft, LogSpectrogram, StftConfig, PATCH_FRAMES};
use roomxfer_core::rir::{image_source_rir, noise_decay_rir, sample_room, SizeClass};
use roomxfer_core::synth::{synth_dry, DryKind};

fn clips() -> Vec<NamedClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    DryKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| NamedClip {
            id: format!("dry{i}"),
            clip: synth_dry(k, 5 * SAMPLE_RATE as usize, None, &mut rng),
        })
        .collect()
}

fn rirs() -> Vec<NamedRir> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..3)
        .map(|i| {
            let room = sample_room(&mut rng, SizeClass::ALL[i]);
            NamedRir::new(format!("rir{i}"), image_source_rir(&room).unwrap()).unwrap()
        })
        .collect()
}

#[test]
fn transfer_example_replays_from_its_seed() {
    let (clips, rirs) = (clips(), rirs());
    let cfg = ExampleConfig::default();
    let example = build_transfer_example(&clips[0], &clips[2], &rirs[0], &rirs[1], &cfg, &mut ChaCha8Rng::seed_from_u64(77))
        .unwrap();

    // scripted composition drawing from the same stream in the same order
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let len = 3 * SAMPLE_RATE as usize;
    let off_a = rng.random_range(0..=clips[0].clip.len() - len);
    let off_b = rng.random_range(0..=clips[2].clip.len() - len);
    assert_eq!(example.offsets, (off_a, off_b));
    let patch_a = patch_at(&clips[0].clip, off_a, len);
    let patch_b = patch_at(&clips[2].clip, off_b, len);
    let span = cfg.stft.span_of(PATCH_FRAMES);
    let mut render = |dry: &AudioClip, h: &NamedRir| {
        let wet = convolve(dry, &h.ir.clip).unwrap().fit_to(span);
        let gain = rng.random_range(0.1..=1.0);
        let peak = wet.peak();
        log_magnitude(&stft(&wet.scaled(gain / peak), &cfg.stft).unwrap())
    };
    let input = render(&patch_a, &rirs[0]);
    let target = render(&patch_a, &rirs[1]);
    let cond = render(&patch_b, &rirs[1]);
    assert_eq!(example.input_spec, input);
    assert_eq!(example.target_spec, target);
    assert_eq!(example.cond_spec, cond);
    assert_eq!(example.ids.audio_a, "dry0");
    assert_eq!(example.ids.rir_j, "rir1");
}

#[test]
fn input_and_target_share_the_dry_patch() {
    let (clips, rirs) = (clips(), rirs());
    let cfg = ExampleConfig::default();
    for seed in 0..10 {
        let ex = build_transfer_example(&clips[1], &clips[3], &rirs[2], &rirs[0], &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (offset, patch) = random_patch(&clips[1].clip, 3.0, &mut rng).unwrap();
        assert_eq!(offset, ex.offsets.0);
        // the input is the shared patch through rir_i, so undoing its gain
        // leaves the same grid whichever draw the gain came from
        let wet = rirs[2].apply(&patch).unwrap().fit_to(cfg.stft.span_of(PATCH_FRAMES));
        let unit = log_magnitude(&stft(&peak_normalize(&wet, 1.0).unwrap(), &cfg.stft).unwrap());
        let shift = ex.input_spec.data[0] - unit.data[0];
        let (mut lo, mut hi) = (f32::MAX, f32::MIN);
        let floor = cfg.stft.log_floor_ln() as f32;
        for (a, b) in ex.input_spec.data.iter().zip(&unit.data) {
            if *a > floor + 1.0 && *b > floor + 1.0 {
                lo = lo.min(a - b);
                hi = hi.max(a - b);
            }
        }
        assert!(hi - lo < 1e-4, "shift spread {lo}..{hi} (first {shift})");
    }
}

#[test]
fn patch_offsets_cover_a_thirty_second_clip() {
    let clip = AudioClip::zeros(30 * SAMPLE_RATE as usize, SAMPLE_RATE);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut offsets: Vec<usize> = (0..10_000).map(|_| random_patch(&clip, 3.0, &mut rng).unwrap().0).collect();
    offsets.sort_unstable();
    let last = 27 * SAMPLE_RATE as usize;
    assert!(*offsets.last().unwrap() <= last);
    let mut edges = vec![0];
    edges.extend(&offsets);
    edges.push(last);
    let widest = edges.windows(2).map(|w| w[1] - w[0]).max().unwrap();
    assert!(widest <= SAMPLE_RATE as usize, "gap of {widest} samples");
}

#[test]
fn pair_labels_and_kinds_are_balanced() {
    let (clips, rirs) = (clips(), rirs());
    let cfg = ExampleConfig::default();
    let mut counts = std::collections::HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let kind = roomxfer_core::dataset::draw_pair_kind(&mut rng);
        *counts.entry(kind).or_insert(0usize) += 1;
    }
    let label0 = counts[&PairKind::SameAudioSameRir] + counts[&PairKind::DiffAudioSameRir];
    assert!((label0 as f64 / 10_000.0 - 0.5).abs() <= 0.02);
    for n in counts.values() {
        assert!((*n as f64 / 10_000.0 - 0.25).abs() <= 0.02);
    }
    // rendered pairs agree with their declared construction
    for seed in 0..12 {
        let p = build_pair_example(&clips, &rirs, &cfg, &AugmentParams::disabled(), &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        let same_audio = p.audio.0 == p.audio.1;
        let same_rir = p.rirs.0 == p.rirs.1;
        assert_eq!(p.label == 0, same_rir);
        assert_eq!(
            same_audio,
            matches!(p.kind, PairKind::SameAudioSameRir | PairKind::SameAudioDiffRir)
        );
        assert_eq!(p.spec1.shape(), (257, 300));
    }
}

#[test]
fn pair_builder_needs_two_of_each() {
    let (clips, rirs) = (clips(), rirs());
    let cfg = ExampleConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(build_pair_example(&clips[..1], &rirs, &cfg, &AugmentParams::default(), &mut rng).is_err());
    assert!(build_pair_example(&clips, &rirs[..1], &cfg, &AugmentParams::default(), &mut rng).is_err());
}

fn grid(seed: u64, frames: usize) -> LogSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = StftConfig::default();
    let floor = cfg.log_floor_ln();
    let data = (0..257 * frames).map(|_| rng.random_range(floor..3.0) as f32).collect();
    LogSpectrogram::new(257, frames, data, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_stays_above_the_jitter_bound(seed in any::<u64>(), frames in 1usize..40, p in 0.0f64..=1.0, sigma in 0.0f64..0.5) {
        let spec = grid(seed, frames);
        let params = AugmentParams {
            volume_p: p,
            flip_p: p,
            cutout_p: p,
            jitter_p: p,
            jitter_sigma: sigma,
            ..AugmentParams::default()
        };
        let out = augment_spectrogram(&spec, &params, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let bound = (spec.config.log_floor_ln() - 5.0 * sigma) as f32 - 1e-5;
        prop_assert!(out.data.iter().all(|v| v.is_finite() && *v >= bound));
        prop_assert_eq!(out.shape(), spec.shape());
    }

    #[test]
    fn peak_normalize_is_idempotent(seed in any::<u64>(), len in 1usize..500, target in 0.01f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        samples[0] = 0.5;
        let x = AudioClip::new(samples, SAMPLE_RATE).unwrap();
        let once = peak_normalize(&x, target).unwrap();
        let twice = peak_normalize(&once, target).unwrap();
        prop_assert!((once.peak() - target).abs() < 1e-12);
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_gain_is_a_function_of_its_inputs(seed in any::<u64>(), lo in 0.01f64..0.5, width in 0.0f64..0.5) {
        let x = synth_dry(DryKind::Pluck, 2000, None, &mut ChaCha8Rng::seed_from_u64(seed));
        let hi = lo + width;
        let a = random_gain(&x, &mut ChaCha8Rng::seed_from_u64(seed), lo, hi).unwrap();
        let b = random_gain(&x, &mut ChaCha8Rng::seed_from_u64(seed), lo, hi).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.peak() >= lo - 1e-12 && a.peak() <= hi + 1e-12);
    }

    #[test]
    fn split_counts_partition_everything(n in 0usize..5000, frac in 0.0f64..0.4, min_each in 0usize..4) {
        let [train, val, test] = split_counts(n, frac, min_each);
        prop_assert_eq!(train + val + test, n);
        prop_assert_eq!(val, test);
    }

    #[test]
    fn noise_rooms_render_full_grids(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = clips();
        let rirs: Vec<NamedRir> = (0..2)
            .map(|i| NamedRir::new(format!("n{i}"), noise_decay_rir(rng.random_range(0.1..1.5), SAMPLE_RATE, 8000, &mut rng).unwrap()).unwrap())
            .collect();
        let ex = build_transfer_example(&cl[0], &cl[1], &rirs[0], &rirs[1], &ExampleConfig::default(), &mut rng).unwrap();
        for s in [&ex.input_spec, &ex.cond_spec, &ex.target_spec] {
            prop_assert_eq!(s.shape(), (257, 300));
            prop_assert!(s.data.iter().all(|v| v.is_finite()));
        }
    }
}
