//! Binary containers: `SPEC1` log-spectrograms and `CKPT1` checkpoints.
//!
//! SPEC1: `SPEC`, version byte 1, then u32 bins, frames, sample rate and
//! hop, then the bin-major float32 grid. CKPT1: `CKPT`, version byte 1, a
//! tensor list, then a u32 count of named blocks each holding another tensor
//! list. A tensor list is a u32 count followed by entries of u32 name length,
//! name bytes, u32 rank, u32 dims and the float32 payload. Integers and
//! floats are little-endian.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use roomxfer_core::dsp::{LogSpectrogram, StftConfig};
use roomxfer_core::tensor::Tensor;
use thiserror::Error;

use crate::fsutil::write_bytes_atomic;

pub const SPEC_MAGIC: &[u8; 4] = b"SPEC";
pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

fn invalid(path: &Path, msg: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let raw = self.take(n.checked_mul(4)?)?;
        Some(raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_spec1(spec: &LogSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + spec.data.len() * 4);
    out.extend_from_slice(SPEC_MAGIC);
    out.push(VERSION);
    put_u32(&mut out, spec.bins);
    put_u32(&mut out, spec.frames);
    put_u32(&mut out, spec.config.sample_rate as usize);
    put_u32(&mut out, spec.config.hop);
    for v in &spec.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `path` only labels errors.
pub fn decode_spec1(bytes: &[u8], path: &Path) -> Result<LogSpectrogram, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(SPEC_MAGIC) {
        return Err(invalid(path, "not a SPEC1 file (bad magic)"));
    }
    match c.u8() {
        Some(VERSION) => {}
        Some(v) => return Err(invalid(path, format!("unsupported SPEC version {v}"))),
        None => return Err(invalid(path, "truncated header")),
    }
    let header: Option<Vec<u32>> = (0..4).map(|_| c.u32()).collect();
    let [bins, frames, sample_rate, hop] = header
        .ok_or_else(|| invalid(path, "truncated header"))?
        .try_into()
        .map_err(|_| invalid(path, "truncated header"))?;
    if bins < 2 {
        return Err(invalid(path, format!("bins = {bins}")));
    }
    let config = StftConfig {
        fft_size: 2 * (bins as usize - 1),
        hop: hop as usize,
        sample_rate,
        ..StftConfig::default()
    };
    config.validate().map_err(|e| invalid(path, e.to_string()))?;
    let n = (bins as usize)
        .checked_mul(frames as usize)
        .ok_or_else(|| invalid(path, "grid size overflows"))?;
    let data = c.f32s(n).ok_or_else(|| invalid(path, "payload shorter than header declares"))?;
    if !c.done() {
        return Err(invalid(path, "trailing bytes after payload"));
    }
    LogSpectrogram::new(bins as usize, frames as usize, data, config).map_err(|e| invalid(path, e.to_string()))
}

pub fn write_spec1(spec: &LogSpectrogram, path: &Path) -> Result<(), FormatError> {
    write_bytes_atomic(path, &encode_spec1(spec)).map_err(io_err(path))
}

pub fn read_spec1(path: &Path) -> Result<LogSpectrogram, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_spec1(&bytes, path)
}

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub params: NamedTensors,
    pub blocks: Vec<(String, NamedTensors)>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&NamedTensors> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn put_list(out: &mut Vec<u8>, list: &NamedTensors) {
    put_u32(out, list.len());
    for (name, t) in list {
        put_u32(out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.shape.len());
        for &d in &t.shape {
            put_u32(out, d);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn get_list(c: &mut Cursor<'_>, path: &Path) -> Result<NamedTensors, FormatError> {
    let truncated = || invalid(path, "truncated tensor list");
    let count = c.u32().ok_or_else(truncated)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = c.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(truncated)?)
            .map_err(|_| invalid(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32().ok_or_else(truncated)? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(truncated)?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| invalid(path, format!("`{name}` is too large")))?;
        let data = c.f32s(n).ok_or_else(truncated)?;
        let tensor = Tensor::new(shape, data).map_err(|e| invalid(path, e.to_string()))?;
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn encode_ckpt1(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.push(VERSION);
    put_list(&mut out, &ckpt.params);
    put_u32(&mut out, ckpt.blocks.len());
    for (name, list) in &ckpt.blocks {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_list(&mut out, list);
    }
    out
}

pub fn decode_ckpt1(bytes: &[u8], path: &Path) -> Result<Checkpoint, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(CKPT_MAGIC) {
        return Err(invalid(path, "not a CKPT1 file (bad magic)"));
    }
    match c.u8() {
        Some(VERSION) => {}
        Some(v) => return Err(invalid(path, format!("unsupported CKPT version {v}"))),
        None => return Err(invalid(path, "truncated header")),
    }
    let params = get_list(&mut c, path)?;
    let count = c.u32().ok_or_else(|| invalid(path, "missing block count"))? as usize;
    let mut blocks = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = c.u32().ok_or_else(|| invalid(path, "truncated block header"))? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(|| invalid(path, "truncated block header"))?)
            .map_err(|_| invalid(path, "block name is not UTF-8"))?
            .to_string();
        blocks.push((name, get_list(&mut c, path)?));
    }
    if !c.done() {
        return Err(invalid(path, "trailing bytes after last block"));
    }
    Ok(Checkpoint { params, blocks })
}

pub fn write_ckpt1(ckpt: &Checkpoint, path: &Path) -> Result<(), FormatError> {
    write_bytes_atomic(path, &encode_ckpt1(ckpt)).map_err(io_err(path))
}

pub fn read_ckpt1(path: &Path) -> Result<Checkpoint, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ckpt1(&bytes, path)
}
