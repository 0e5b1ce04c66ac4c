use std::fs;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};
use roomxfer::wav::{read_wav, write_wav, WavError};
use roomxfer_core::audio::AudioClip;

fn write_pcm16(path: &Path, channels: u16, frames: &[Vec<i16>]) {
    let spec = WavSpec {
        channels,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).unwrap();
    for frame in frames {
        for s in frame {
            w.write_sample(*s).unwrap();
        }
    }
    w.finalize().unwrap();
}

#[test]
fn pcm16_silence_reads_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("silence.wav");
    write_pcm16(&path, 1, &vec![vec![0]; 1600]);
    let clip = read_wav(&path).unwrap();
    assert_eq!(clip.len(), 1600);
    assert_eq!(clip.sample_rate, 16_000);
    assert!(clip.samples.iter().all(|s| *s == 0.0));
}

#[test]
fn pcm16_scaling_is_one_over_32768() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pcm.wav");
    write_pcm16(&path, 1, &[vec![16384], vec![-32768], vec![32767]]);
    let clip = read_wav(&path).unwrap();
    assert_eq!(clip.samples, vec![0.5, -1.0, 32767.0 / 32768.0]);
}

#[test]
fn stereo_is_averaged_to_mono() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stereo.wav");
    write_pcm16(&path, 2, &[vec![16384, 0], vec![8192, 8192]]);
    let clip = read_wav(&path).unwrap();
    assert_eq!(clip.samples, vec![0.25, 0.25]);
}

#[test]
fn float_round_trip_is_exact_for_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("float.wav");
    let samples: Vec<f64> = (0..500).map(|i| ((i as f32 * 0.37).sin() * 0.8) as f64).collect();
    let clip = AudioClip::new(samples.clone(), 16_000).unwrap();
    write_wav(&clip, &path).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.samples, samples);
    assert_eq!(back.sample_rate, 16_000);
}

#[test]
fn invalid_clips_leave_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.wav");
    let nan = AudioClip {
        samples: vec![0.0, f64::NAN],
        sample_rate: 16_000,
    };
    assert!(matches!(write_wav(&nan, &path), Err(WavError::Audio { .. })));
    let empty = AudioClip {
        samples: vec![],
        sample_rate: 16_000,
    };
    assert!(write_wav(&empty, &path).is_err());
    assert!(!path.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn missing_malformed_and_unsupported_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.wav");
    assert!(matches!(read_wav(&missing), Err(WavError::Missing(_))));

    let junk = dir.path().join("junk.wav");
    fs::write(&junk, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
    let r = read_wav(&junk);
    assert!(matches!(r, Err(WavError::Malformed { .. })), "{r:?}");

    let pcm24 = dir.path().join("pcm24.wav");
    let spec = WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 24,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(&pcm24, spec).unwrap();
    w.write_sample(1i32).unwrap();
    w.finalize().unwrap();
    assert!(matches!(read_wav(&pcm24), Err(WavError::Unsupported { .. })));
}
