use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomxfer_core::audio::{AudioClip, SAMPLE_RATE};
use roomxfer_core::dataset::{build_transfer_example, ExampleConfig, NamedClip, NamedRir, TransferExample};
use roomxfer_core::dsp::{griffin_lim, patch_log_spectrogram, LogSpectrogram, StftConfig};
use roomxfer_core::evaluator::{evaluate_transfer, EvaluatorArch, EvaluatorModel};
use roomxfer_core::rir::noise_decay_rir;
use roomxfer_core::synth::{synth_dry, DryKind};
use roomxfer_core::tensor::{Graph, Tensor};
use roomxfer_core::transfer::{TransferArch, TransferError, TransferModel};

fn inference_arch() -> TransferArch {
    TransferArch {
        dropout: 0.0,
        ..TransferArch::default()
    }
}

fn model(seed: u64) -> TransferModel<f32> {
    TransferModel::new(inference_arch(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn dry(kind: DryKind, secs: f64, seed: u64) -> AudioClip {
    synth_dry(kind, (secs * SAMPLE_RATE as f64) as usize, None, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn wet_spec(kind: DryKind, rt60: f64, seed: u64) -> LogSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ir = noise_decay_rir(rt60, SAMPLE_RATE, 16_000, &mut rng).unwrap();
    let rir = NamedRir::new("r", ir).unwrap();
    let wet = rir.apply(&dry(kind, 3.0, seed)).unwrap();
    patch_log_spectrogram(&wet, &StftConfig::default()).unwrap()
}

fn examples(n: usize) -> Vec<TransferExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let clips: Vec<NamedClip> = (0..2)
        .map(|i| NamedClip {
            id: format!("a{i}"),
            clip: dry(DryKind::ALL[i], 4.0, 50 + i as u64),
        })
        .collect();
    let rirs: Vec<NamedRir> = [0.2, 0.9]
        .iter()
        .enumerate()
        .map(|(i, &rt)| NamedRir::new(format!("r{i}"), noise_decay_rir(rt, SAMPLE_RATE, 16_000, &mut rng).unwrap()).unwrap())
        .collect();
    let cfg = ExampleConfig::default();
    (0..n)
        .map(|_| build_transfer_example(&clips[0], &clips[1], &rirs[0], &rirs[1], &cfg, &mut rng).unwrap())
        .collect()
}

#[test]
fn transfer_shapes_follow_the_token_layout() {
    let m = model(1);
    let (input, cond) = (wet_spec(DryKind::Tone, 0.4, 1), wet_spec(DryKind::Noise, 0.8, 2));
    let mut g = Graph::with_params(&m.params);
    let x = g.constant(Tensor::from_f32(&[300, 257], &input.to_frame_major()).unwrap());
    let c = g.constant(Tensor::from_f32(&[1, 257, 300], &cond.data).unwrap());
    let vars = m.forward(&mut g, x, c).unwrap();
    assert_eq!(g.shape(vars.embedding), [257]);
    assert_eq!(g.shape(vars.tokens), [301, 257]);
    assert_eq!(g.shape(vars.residual), [300, 257]);
    assert_eq!(g.shape(vars.predicted), [300, 257]);

    let out = m.transfer(&input, &cond).unwrap();
    assert_eq!(out.predicted.shape(), (257, 300));
    assert_eq!(out.residual.shape(), (257, 300));
    assert_eq!(out.embedding.len(), 257);
    for i in 0..input.data.len() {
        assert_eq!(out.predicted.data[i], input.data[i] + out.residual.data[i]);
    }
}

#[test]
fn wrong_shapes_are_rejected() {
    let m = model(1);
    let good = wet_spec(DryKind::Tone, 0.4, 1);
    let short = good.frame_range(0, 299);
    assert!(matches!(m.transfer(&short, &good), Err(TransferError::Dsp(_))));
    assert!(matches!(m.transfer(&good, &short), Err(TransferError::Dsp(_))));
}

#[test]
fn zeroed_output_projection_gives_identity() {
    let mut m = model(2);
    m.zero_residual();
    let (input, cond) = (wet_spec(DryKind::Chirp, 0.5, 3), wet_spec(DryKind::Pluck, 1.0, 4));
    let out = m.transfer(&input, &cond).unwrap();
    assert!(out.residual.data.iter().all(|&v| v == 0.0));
    assert_eq!(out.predicted, input);
}

#[test]
fn conditioning_changes_the_embedding_and_residual() {
    let m = model(3);
    let input = wet_spec(DryKind::Tone, 0.4, 5);
    let (c1, c2) = (wet_spec(DryKind::Noise, 0.2, 6), wet_spec(DryKind::Noise, 1.2, 6));
    let (o1, o2) = (m.transfer(&input, &c1).unwrap(), m.transfer(&input, &c2).unwrap());
    let l2 = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
    assert!(l2(&o1.embedding, &o2.embedding) > 0.0);
    assert!(l2(&o1.residual.data, &o2.residual.data) > 0.0);

    // a constant shift of the conditioning grid is not expected to be invisible
    let mut shifted = c1.clone();
    shifted.data.iter_mut().for_each(|v| *v += 1.0);
    let o3 = m.transfer(&input, &shifted).unwrap();
    assert!(l2(&o1.embedding, &o3.embedding) > 0.0);
}

#[test]
fn inference_is_deterministic() {
    let (input, cond) = (wet_spec(DryKind::Pluck, 0.6, 7), wet_spec(DryKind::Chirp, 0.3, 8));
    let a = model(4).transfer(&input, &cond).unwrap();
    let b = model(4).transfer(&input, &cond).unwrap();
    assert_eq!(a, b);
}

#[test]
fn waveform_length_matches_input() {
    let m = model(5);
    let cfg = StftConfig::default();
    let x = dry(DryKind::Tone, 3.0, 9);
    let cond = dry(DryKind::Noise, 3.0, 10);
    let y = m.transfer_waveform(&x, &cond, &cfg, 4).unwrap();
    assert_eq!(y.len(), x.len());
    assert!(y.samples.iter().all(|v| v.is_finite()));
    let short = dry(DryKind::Tone, 2.0, 9);
    assert!(matches!(
        m.transfer_waveform(&short, &cond, &cfg, 4),
        Err(TransferError::TooShort { .. })
    ));
    assert!(matches!(
        m.transfer_waveform(&x, &short, &cfg, 4),
        Err(TransferError::TooShort { .. })
    ));
}

#[test]
fn zero_residual_waveform_is_griffin_lim_of_input() {
    let mut m = model(6);
    m.zero_residual();
    let cfg = StftConfig::default();
    let x = dry(DryKind::Chirp, 3.0, 11);
    let cond = dry(DryKind::Pluck, 3.0, 12);
    let y = m.transfer_waveform(&x, &cond, &cfg, 8).unwrap();
    let direct = griffin_lim(&patch_log_spectrogram(&x, &cfg).unwrap(), 8).unwrap();
    assert_eq!(y, direct.clip.fit_to(x.len()));
}

#[test]
fn chunked_transfer_matches_independent_windows() {
    let m = model(7);
    let cfg = StftConfig::default();
    let x = dry(DryKind::Noise, 9.0, 13);
    let cond = dry(DryKind::Tone, 3.0, 14);
    let chunks = m.transfer_chunks(&x, &cond, &cfg).unwrap();
    assert_eq!(chunks.len(), 3);
    for (k, chunk) in chunks.iter().enumerate() {
        let piece = AudioClip {
            samples: x.samples[k * 48_000..(k + 1) * 48_000].to_vec(),
            sample_rate: SAMPLE_RATE,
        };
        let alone = m.transfer_chunks(&piece, &cond, &cfg).unwrap();
        assert_eq!(alone.len(), 1);
        assert_eq!(&alone[0], chunk);
    }
}

fn evaluator(seed: u64) -> EvaluatorModel<f32> {
    EvaluatorModel::new(EvaluatorArch::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn evaluator_embedding_and_score_contracts() {
    let ev = evaluator(1);
    let (dry_room, wet_room) = (wet_spec(DryKind::Tone, 0.15, 1), wet_spec(DryKind::Tone, 1.5, 1));
    let e1 = ev.embed(&dry_room).unwrap();
    assert_eq!(e1.len(), 128);
    assert_eq!(e1, ev.embed(&dry_room).unwrap());
    assert_ne!(e1, ev.embed(&wet_room).unwrap());
    for (a, b) in [(&dry_room, &wet_room), (&wet_room, &dry_room), (&dry_room, &dry_room)] {
        let p = ev.score_pair(a, b).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert!(ev.embed(&dry_room.frame_range(0, 10)).is_err());
}

#[test]
fn untrained_transfer_leaves_scores_unchanged() {
    let mut m = model(8);
    m.zero_residual();
    let ev = evaluator(2);
    let set = examples(3);
    let report = evaluate_transfer(&m, &ev, &set).unwrap();
    assert_eq!(report.examples.len(), 3);
    assert_eq!(report.mean_after, report.mean_before);
    for s in &report.examples {
        assert_eq!(s.before, s.after);
        assert_eq!(s.before_reversed, s.after_reversed);
    }
    assert!(evaluate_transfer(&m, &ev, &[]).is_err());
}
