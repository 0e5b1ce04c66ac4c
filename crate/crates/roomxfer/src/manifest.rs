//! `manifest.jsonl`: one header line carrying the master seed, then one JSON
//! record per impulse response, dry clip, transfer example and pair.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use roomxfer_core::dataset::{PairKind, Split, TransferIds, TransferExample};
use roomxfer_core::dsp::LogSpectrogram;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_spec1;
use crate::fsutil::write_atomic;

pub const MANIFEST: &str = "manifest.jsonl";
pub const FORMAT: &str = "roomxfer-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub rooms: usize,
    pub dry_clips: usize,
    pub examples: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Rir {
        id: String,
        split: Split,
        wav: String,
        meta: String,
    },
    Dry {
        id: String,
        split: Split,
        source: String,
        samples: usize,
    },
    Transfer {
        index: usize,
        split: Split,
        seed: u64,
        input: String,
        cond: String,
        target: String,
        ids: TransferIds,
        offsets: (usize, usize),
    },
    Pair {
        index: usize,
        split: Split,
        seed: u64,
        spec1: String,
        spec2: String,
        label: u8,
        pair_kind: PairKind,
        audio: (String, String),
        rirs: (String, String),
    },
}

impl Record {
    pub fn split(&self) -> Split {
        match self {
            Record::Rir { split, .. }
            | Record::Dry { split, .. }
            | Record::Transfer { split, .. }
            | Record::Pair { split, .. } => *split,
        }
    }

    /// Relative paths of every file the record points at.
    pub fn files(&self) -> Vec<&str> {
        match self {
            Record::Rir { wav, meta, .. } => vec![wav, meta],
            Record::Dry { .. } => vec![],
            Record::Transfer { input, cond, target, .. } => vec![input, cond, target],
            Record::Pair { spec1, spec2, .. } => vec![spec1, spec2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: Header,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairItem {
    pub spec1: LogSpectrogram,
    pub spec2: LogSpectrogram,
    pub label: u8,
}

impl Manifest {
    pub fn transfers(&self, split: Split) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Transfer { .. }) && r.split() == split)
            .collect()
    }

    pub fn pairs(&self, split: Split) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Pair { .. }) && r.split() == split)
            .collect()
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    write_atomic(&path, |file: &mut File| -> std::io::Result<()> {
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &manifest.header)?;
        w.write_all(b"\n")?;
        for record in &manifest.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })
    .map_err(|e| Error::io(&path, e))
}

/// Parses a manifest; errors name the 1-based line that failed.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Manifest> {
    let bad = |line: usize, msg: String| Error::Data(format!("{}: line {line}: {msg}", origin.display()));
    let mut lines = text.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(line).map_err(|e| bad(1, format!("bad header: {e}")))?,
        None => return Err(bad(1, "missing header line".into())),
    };
    if header.format != FORMAT || header.version != 1 {
        return Err(bad(1, format!("unsupported dataset format {} v{}", header.format, header.version)));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            return Err(bad(i + 1, "blank line".into()));
        }
        records.push(serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    Ok(Manifest { header, records })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text, &path)
}

/// Dataset directory plus its parsed manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: read_manifest(dir)?,
        })
    }

    fn spec(&self, rel: &str) -> Result<LogSpectrogram> {
        Ok(read_spec1(&self.dir.join(rel))?)
    }

    pub fn load_transfer(&self, record: &Record) -> Result<TransferExample> {
        match record {
            Record::Transfer {
                input,
                cond,
                target,
                ids,
                offsets,
                ..
            } => Ok(TransferExample {
                input_spec: self.spec(input)?,
                cond_spec: self.spec(cond)?,
                target_spec: self.spec(target)?,
                ids: ids.clone(),
                offsets: *offsets,
            }),
            _ => Err(Error::Data("record is not a transfer example".into())),
        }
    }

    pub fn load_pair(&self, record: &Record) -> Result<PairItem> {
        match record {
            Record::Pair { spec1, spec2, label, .. } => Ok(PairItem {
                spec1: self.spec(spec1)?,
                spec2: self.spec(spec2)?,
                label: *label,
            }),
            _ => Err(Error::Data("record is not a pair".into())),
        }
    }
}
