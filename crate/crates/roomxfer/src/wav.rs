//! RIFF/WAVE input (PCM16 or float32, any channel count) and float32 output.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use roomxfer_core::audio::{AudioClip, AudioError};
use thiserror::Error;

use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("{0}: no such file")]
    Missing(PathBuf),
    #[error("{path}: malformed WAV: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("{path}: unsupported encoding ({msg}); expected PCM16 or float32")]
    Unsupported { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: AudioError },
}

fn classify(path: &Path, err: hound::Error) -> WavError {
    let path = path.to_path_buf();
    match err {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::NotFound => WavError::Missing(path),
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::UnexpectedEof || e.raw_os_error().is_none() => {
            WavError::Malformed {
                path,
                msg: format!("truncated file ({e})"),
            }
        }
        hound::Error::IoError(source) => WavError::Io { path, source },
        hound::Error::FormatError(msg) => WavError::Malformed { path, msg: msg.into() },
        hound::Error::Unsupported => WavError::Unsupported {
            path,
            msg: "codec not handled".into(),
        },
        other => WavError::Malformed {
            path,
            msg: other.to_string(),
        },
    }
}

/// Reads a WAV file, averaging channels to mono. PCM16 is scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioClip, WavError> {
    let mut reader = WavReader::open(path).map_err(|e| classify(path, e))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| classify(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| classify(path, e))?,
        (format, bits) => {
            return Err(WavError::Unsupported {
                path: path.to_path_buf(),
                msg: format!("{format:?} {bits}-bit"),
            })
        }
    };
    let channels = spec.channels.max(1) as usize;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate).map_err(|source| WavError::Audio {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a mono float32 WAV. Empty or non-finite clips are rejected before
/// anything touches the filesystem.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), WavError> {
    let audio = |source| WavError::Audio {
        path: path.to_path_buf(),
        source,
    };
    if clip.is_empty() {
        return Err(audio(AudioError::Empty));
    }
    clip.check_finite().map_err(audio)?;
    if clip.sample_rate == 0 {
        return Err(audio(AudioError::ZeroRate));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    write_atomic(path, |file: &mut File| -> Result<(), WavError> {
        let mut writer = WavWriter::new(BufWriter::new(file), spec).map_err(|e| classify(path, e))?;
        for &s in &clip.samples {
            writer.write_sample(s as f32).map_err(|e| classify(path, e))?;
        }
        writer.finalize().map_err(|e| classify(path, e))
    })
}

impl From<io::Error> for WavError {
    fn from(source: io::Error) -> Self {
        WavError::Io {
            path: PathBuf::new(),
            source,
        }
    }
}
