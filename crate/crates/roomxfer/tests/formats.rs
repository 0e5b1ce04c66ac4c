use std::path::Path;

use proptest::prelude::*;
use roomxfer::formats::{
    decode_ckpt1, decode_spec1, encode_ckpt1, encode_spec1, read_ckpt1, read_spec1, write_ckpt1, write_spec1,
    Checkpoint, FormatError,
};
use roomxfer_core::dsp::{LogSpectrogram, StftConfig};
use roomxfer_core::tensor::Tensor;

fn grid(bins: usize, frames: usize, seed: u32) -> LogSpectrogram {
    let fft_size = 2 * (bins - 1);
    let cfg = StftConfig {
        fft_size,
        hop: (fft_size / 2).min(160),
        ..StftConfig::default()
    };
    let data = (0..bins * frames)
        .map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / u32::MAX as f32 * 10.0 - 11.0)
        .collect();
    LogSpectrogram::new(bins, frames, data, cfg).unwrap()
}

#[test]
fn spec1_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.spec1");
    let spec = grid(257, 300, 3);
    write_spec1(&spec, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 21 + 257 * 300 * 4);
    assert_eq!(read_spec1(&path).unwrap(), spec);
}

#[test]
fn spec1_rejects_corruption() {
    let p = Path::new("x.spec1");
    let bytes = encode_spec1(&grid(5, 4, 1));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_spec1(&bad_magic, p), Err(FormatError::Invalid { .. })));
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(decode_spec1(&bad_version, p).is_err());
    assert!(decode_spec1(&bytes[..bytes.len() - 1], p).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode_spec1(&trailing, p).is_err());
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_spec1(&nan, p).is_err());
    assert!(decode_spec1(&bytes[..10], p).is_err());
}

fn ckpt(seed: u32) -> Checkpoint {
    let t = |shape: Vec<usize>, k: u32| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| (i as f32 + k as f32) * 0.25 - seed as f32).collect()).unwrap()
    };
    Checkpoint {
        params: vec![("w".into(), t(vec![3, 4], 1)), ("b".into(), t(vec![4], 2))],
        blocks: vec![("adam.m".into(), vec![("w".into(), t(vec![3, 4], 5))])],
    }
}

#[test]
fn ckpt1_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let c = ckpt(2);
    write_ckpt1(&c, &path).unwrap();
    let back = read_ckpt1(&path).unwrap();
    assert_eq!(back, c);
    assert!(back.block("adam.m").is_some());
    assert!(back.block("adam.v").is_none());
}

#[test]
fn ckpt1_rejects_truncation_and_trailing_bytes() {
    let p = Path::new("m.ckpt");
    let bytes = encode_ckpt1(&ckpt(1));
    for cut in [0, 3, 5, 9, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_ckpt1(&bytes[..cut], p).is_err(), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[1, 2]);
    assert!(decode_ckpt1(&trailing, p).is_err());
}

#[test]
fn missing_files_are_io_errors() {
    assert!(matches!(read_spec1(Path::new("/nonexistent/a.spec1")), Err(FormatError::Io { .. })));
    assert!(matches!(read_ckpt1(Path::new("/nonexistent/a.ckpt")), Err(FormatError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spec1_bytes_round_trip(
        bins in prop::sample::select(vec![2usize, 3, 5, 9, 17, 33, 65, 129, 257]),
        frames in 1usize..30,
        data_seed in any::<u32>()) {
        let spec = grid(bins, frames, data_seed);
        let bytes = encode_spec1(&spec);
        let back = decode_spec1(&bytes, Path::new("p")).unwrap();
        prop_assert_eq!(encode_spec1(&back), bytes);
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn ckpt1_bytes_round_trip(
        shapes in prop::collection::vec(prop::collection::vec(1usize..5, 0..4), 0..6),
        names in prop::collection::vec("[a-z.0-9]{1,12}", 6),
        offset in -100.0f32..100.0,
    ) {
        let params: Vec<(String, Tensor<f32>)> = shapes
            .iter()
            .zip(&names)
            .map(|(s, n)| {
                let len = s.iter().product();
                (n.clone(), Tensor::new(s.clone(), (0..len).map(|i| i as f32 * 0.5 + offset).collect()).unwrap())
            })
            .collect();
        let c = Checkpoint { blocks: vec![("extra".into(), params.clone())], params };
        let back = decode_ckpt1(&encode_ckpt1(&c), Path::new("p")).unwrap();
        prop_assert_eq!(back, c);
    }
}
