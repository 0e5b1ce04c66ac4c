use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomxfer_core::audio::SAMPLE_RATE;
use roomxfer_core::rir::{
    decay_envelope, image_source_rir, image_sources, noise_decay_rir, sabine_rt60, sample_room, schroeder_rt60,
    RoomSpec, SizeClass, IR_PEAK, SPEED_OF_SOUND,
};

fn room(dims: [f64; 3], alpha: f64) -> RoomSpec {
    RoomSpec::uniform(dims, alpha, [1.3, 1.1, 1.2], [dims[0] - 1.4, dims[1] - 1.2, 1.5])
}

fn nonzero_taps(h: &[f64]) -> Vec<usize> {
    h.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
}

#[test]
fn sabine_hand_values() {
    let r = room([5.0, 4.0, 3.0], 0.3);
    assert!((sabine_rt60(&r).unwrap() - 0.161 * 60.0 / 28.2).abs() < 1e-12);
    assert!((sabine_rt60(&room([5.0, 4.0, 3.0], 1.0)).unwrap() - 0.161 * 60.0 / 94.0).abs() < 1e-12);
    let mut big = room([10.0, 8.0, 6.0], 0.3);
    big.source = [2.6, 2.2, 2.4];
    big.receiver = [7.2, 5.6, 3.0];
    assert!((sabine_rt60(&big).unwrap() - 2.0 * sabine_rt60(&r).unwrap()).abs() < 1e-12);
}

#[test]
fn anechoic_room_has_one_tap() {
    let r = room([5.0, 4.0, 3.0], 1.0);
    let ir = image_source_rir(&r).unwrap();
    let expected = (r.source_receiver_distance() * SAMPLE_RATE as f64 / SPEED_OF_SOUND).round() as usize;
    assert_eq!(nonzero_taps(&ir.clip.samples), vec![expected]);
    assert!((ir.clip.samples[expected] - IR_PEAK).abs() < 1e-12);
}

#[test]
fn direct_path_of_3_43_m_lands_on_tap_160() {
    let mut r = room([8.0, 6.0, 3.0], 0.4);
    r.source = [2.0, 3.0, 1.5];
    r.receiver = [5.43, 3.0, 1.5];
    assert_eq!(r.direct_delay(), 160);
    let ir = image_source_rir(&r).unwrap();
    assert_eq!(nonzero_taps(&ir.clip.samples)[0], 160);
}

#[test]
fn first_order_taps_match_hand_enumeration() {
    let mut r = room([5.0, 4.0, 3.0], 0.3);
    r.absorption = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    r.max_order = 1;
    let [sx, sy, sz] = r.source;
    let [lx, ly, lz] = r.dims;
    // mirror images across each of the six walls plus the source itself
    let images = [
        ([sx, sy, sz], None),
        ([-sx, sy, sz], Some(r.absorption[0])),
        ([2.0 * lx - sx, sy, sz], Some(r.absorption[1])),
        ([sx, -sy, sz], Some(r.absorption[2])),
        ([sx, 2.0 * ly - sy, sz], Some(r.absorption[3])),
        ([sx, sy, -sz], Some(r.absorption[4])),
        ([sx, sy, 2.0 * lz - sz], Some(r.absorption[5])),
    ];
    let mut expected = vec![0.0; r.length];
    let mut hand: Vec<(usize, f64)> = images
        .iter()
        .map(|(p, alpha)| {
            let d = p.iter().zip(&r.receiver).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let gain = alpha.map_or(1.0, |a: f64| (1.0 - a).sqrt());
            ((d * 16_000.0 / 343.0).round() as usize, gain / d)
        })
        .collect();
    for &(delay, amp) in &hand {
        expected[delay] += amp;
    }
    let mut taps: Vec<(usize, f64)> = image_sources(&r).unwrap().iter().map(|t| (t.delay, t.amplitude)).collect();
    assert_eq!(taps.len(), 7);
    taps.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    hand.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for (t, h) in taps.iter().zip(&hand) {
        assert_eq!(t.0, h.0);
        assert!((t.1 - h.1).abs() < 1e-12);
    }
    let peak = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ir = image_source_rir(&r).unwrap();
    for (a, b) in ir.clip.samples.iter().zip(&expected) {
        assert!((a - b * IR_PEAK / peak).abs() < 1e-12);
    }
}

#[test]
fn noise_decay_rt60_is_recovered_within_20_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rt60 in [0.2, 0.4, 0.7, 1.0, 1.5] {
        for _ in 0..5 {
            let len = (rt60 * 1.5 * SAMPLE_RATE as f64) as usize;
            let ir = noise_decay_rir(rt60, SAMPLE_RATE, len, &mut rng).unwrap();
            let measured = schroeder_rt60(&ir.clip).unwrap();
            assert!((measured - rt60).abs() <= 0.2 * rt60, "asked {rt60}, measured {measured}");
        }
    }
}

#[test]
fn noise_decay_envelope_and_determinism() {
    assert!((decay_envelope(0.8, 0.8) - 1e-3).abs() < 1e-15);
    let a = noise_decay_rir(0.5, SAMPLE_RATE, 8000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = noise_decay_rir(0.5, SAMPLE_RATE, 8000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
    assert!((a.clip.peak() - IR_PEAK).abs() < 1e-12);
    assert!(noise_decay_rir(0.0, SAMPLE_RATE, 8000, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
}

#[test]
fn image_source_decay_tracks_sabine_in_mid_absorption_rooms() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let mut point = || [rng.random_range(0.5..4.5), rng.random_range(0.5..3.5), rng.random_range(0.5..2.5)];
        let (source, receiver) = (point(), point());
        for k in 0..7 {
            let alpha = 0.2 + 0.05 * k as f64;
            let mut r = RoomSpec::uniform([5.0, 4.0, 3.0], alpha, source, receiver);
            r.max_order = 40;
            let sabine = sabine_rt60(&r).unwrap();
            let measured = schroeder_rt60(&image_source_rir(&r).unwrap().clip).unwrap();
            assert!(
                (measured - sabine).abs() <= 0.35 * sabine,
                "alpha {alpha}: sabine {sabine:.3}, measured {measured:.3}"
            );
        }
    }
}

#[test]
fn sampled_small_rooms_stay_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let r = sample_room(&mut rng, SizeClass::Small);
        assert!(r.dims[..2].iter().all(|d| (3.0..=6.0).contains(d)));
        assert!((2.5..=4.0).contains(&r.dims[2]));
        assert!(r.absorption.iter().all(|a| (0.05..=0.6).contains(a)));
        for p in [r.source, r.receiver] {
            assert!(p.iter().zip(&r.dims).all(|(c, d)| *c >= 0.5 && *c <= d - 0.5));
        }
        assert!(r.source_receiver_distance() >= 0.3);
        r.validate().unwrap();
    }
    let a = sample_room(&mut ChaCha8Rng::seed_from_u64(7), SizeClass::Large);
    let b = sample_room(&mut ChaCha8Rng::seed_from_u64(7), SizeClass::Large);
    assert_eq!(a, b);
}

#[test]
fn default_medium_rooms_have_plausible_reverb() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let rt = sabine_rt60(&sample_room(&mut rng, SizeClass::Medium)).unwrap();
        assert!((0.2..=2.0).contains(&rt), "{rt}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn first_tap_is_the_direct_path(seed in any::<u64>(), class in 0usize..2, order in 0u32..6) {
        let mut r = sample_room(&mut ChaCha8Rng::seed_from_u64(seed), SizeClass::ALL[class]);
        r.max_order = order;
        let ir = image_source_rir(&r).unwrap();
        prop_assert_eq!(nonzero_taps(&ir.clip.samples)[0], r.direct_delay());
        prop_assert!(ir.clip.samples.iter().all(|v| v.is_finite()));
        prop_assert!((ir.clip.peak() - IR_PEAK).abs() < 1e-12);
    }

    #[test]
    fn noise_rirs_are_finite_and_normalized(seed in any::<u64>(), rt60 in 0.05f64..3.0, len in 1usize..20_000) {
        let ir = noise_decay_rir(rt60, SAMPLE_RATE, len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(ir.clip.samples.iter().all(|v| v.is_finite()));
        prop_assert!((ir.clip.peak() - IR_PEAK).abs() < 1e-12);
    }
}
