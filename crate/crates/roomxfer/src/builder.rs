//! Dataset generation: rooms, dry clips, transfer triplets and pairs written
//! into a directory that appears only once it is complete.

use std::fs;
use std::path::{Path, PathBuf};

use roomxfer_core::audio::{AudioClip, SAMPLE_RATE};
use roomxfer_core::dataset::{
    assign_splits, build_pair_example, build_transfer_example, child_seed, pick_pair, rng_from, AugmentParams,
    ExampleConfig, NamedClip, NamedRir, Split,
};
use roomxfer_core::rir::{image_source_rir, sabine_rt60, sample_room, RoomSpec, SizeClass};
use roomxfer_core::synth::{synth_dry, DryKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_spec1;
use crate::fsutil::write_json_atomic;
use crate::manifest::{write_manifest, Header, Manifest, Record, FORMAT};
use crate::wav::{read_wav, write_wav};

pub const STREAM_ROOM: u64 = 1;
pub const STREAM_DRY: u64 = 2;
pub const STREAM_TRANSFER: u64 = 3;
pub const STREAM_PAIR: u64 = 4;

/// Held-out fraction and per-split minimum for rooms and dry clips.
pub const POOL_HELD_OUT: (f64, usize) = (1.0 / 6.0, 2);
/// Held-out fraction for transfer examples and pairs.
pub const ITEM_HELD_OUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub rooms: usize,
    pub examples: usize,
    pub pairs: usize,
    /// Synthetic dry clips to generate.
    pub dry_clips: usize,
    pub dry_secs: f64,
    /// Extra dry WAVs (16 kHz, at least one patch long), sorted by name.
    pub dry_dir: Option<PathBuf>,
}

impl BuildOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            seed: 0,
            rooms: 24,
            examples: 2000,
            pairs: 4000,
            dry_clips: 24,
            dry_secs: 10.0,
            dry_dir: None,
        }
    }
}

/// Sidecar written next to every impulse response WAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirMeta {
    pub id: String,
    pub split: Split,
    pub size_class: SizeClass,
    pub room: RoomSpec,
    pub rt60_sabine: f64,
    pub samples: usize,
    pub truncated_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildSummary {
    pub out: PathBuf,
    pub rooms: [usize; 3],
    pub dry_clips: [usize; 3],
    pub examples: [usize; 3],
    pub pairs: [usize; 3],
}

fn per_split<T: Clone>(items: &[T], splits: &[Split], want: Split) -> Vec<T> {
    items
        .iter()
        .zip(splits)
        .filter(|(_, s)| **s == want)
        .map(|(x, _)| x.clone())
        .collect()
}

fn counts(splits: &[Split]) -> [usize; 3] {
    Split::ALL.map(|s| splits.iter().filter(|x| **x == s).count())
}

pub fn room_spec(seed: u64, index: usize) -> (SizeClass, RoomSpec) {
    let class = SizeClass::ALL[index % SizeClass::ALL.len()];
    (class, sample_room(&mut rng_from(child_seed(seed, STREAM_ROOM, index as u64)), class))
}

pub fn synthetic_clip(seed: u64, index: usize, samples: usize) -> (DryKind, AudioClip) {
    let kind = DryKind::ALL[index % DryKind::ALL.len()];
    let clip = synth_dry(kind, samples, None, &mut rng_from(child_seed(seed, STREAM_DRY, index as u64)));
    (kind, clip)
}

fn user_clips(dir: &Path, need: usize) -> Result<Vec<(String, AudioClip)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let clip = read_wav(&p)?;
            clip.check_rate(SAMPLE_RATE)
                .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            if clip.len() < need {
                return Err(Error::Data(format!(
                    "{}: {} samples is shorter than one {need}-sample patch",
                    p.display(),
                    clip.len()
                )));
            }
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, clip))
        })
        .collect()
}

/// Checks the option values; touches nothing on disk.
pub fn validate_options(opts: &BuildOptions) -> Result<()> {
    if !(opts.dry_secs.is_finite() && opts.dry_secs > 0.0) {
        return Err(Error::Usage(format!("--dry-secs must be positive, got {}", opts.dry_secs)));
    }
    if opts.out.as_os_str().is_empty() {
        return Err(Error::Usage("--out must not be empty".into()));
    }
    Ok(())
}

/// Builds the dataset into a sibling temporary directory and renames it to
/// `opts.out` once everything is written. `out` must not exist yet.
pub fn build_dataset(opts: &BuildOptions) -> Result<BuildSummary> {
    validate_options(opts)?;
    if opts.out.exists() {
        return Err(Error::Usage(format!("{} already exists", opts.out.display())));
    }
    let cfg = ExampleConfig::default();
    let patch = cfg.patch_len();

    let mut clips: Vec<(String, String, AudioClip)> = Vec::new();
    let synth_len = (opts.dry_secs * SAMPLE_RATE as f64).round() as usize;
    if opts.dry_clips > 0 && synth_len < patch {
        return Err(Error::Usage(format!(
            "--dry-secs {} is shorter than one {}-second patch",
            opts.dry_secs, cfg.patch_secs
        )));
    }
    for i in 0..opts.dry_clips {
        let (kind, clip) = synthetic_clip(opts.seed, i, synth_len);
        clips.push((format!("dry{i:03}"), format!("synth:{}", kind.name()), clip));
    }
    if let Some(dir) = &opts.dry_dir {
        for (name, clip) in user_clips(dir, patch)? {
            clips.push((format!("dry{:03}", clips.len()), format!("file:{name}"), clip));
        }
    }
    let clip_splits = assign_splits(clips.len(), POOL_HELD_OUT.0, POOL_HELD_OUT.1);
    let room_splits = assign_splits(opts.rooms, POOL_HELD_OUT.0, POOL_HELD_OUT.1);
    let example_splits = assign_splits(opts.examples, ITEM_HELD_OUT, 0);
    let pair_splits = assign_splits(opts.pairs, ITEM_HELD_OUT, 0);
    for split in Split::ALL {
        let wanted = example_splits.contains(&split) || pair_splits.contains(&split);
        let c = clip_splits.iter().filter(|s| **s == split).count();
        let r = room_splits.iter().filter(|s| **s == split).count();
        if wanted && c < 2 {
            return Err(Error::Data(format!(
                "insufficient dry audio: the {} split has {c} clips, needs 2 (have {} clips in total)",
                split.name(),
                clips.len()
            )));
        }
        if wanted && r < 2 {
            return Err(Error::Usage(format!(
                "--rooms {} leaves the {} split with {r} rooms, needs 2",
                opts.rooms,
                split.name()
            )));
        }
    }

    let parent = match opts.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".roomxfer-build-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let root = tmp.path();
    for sub in ["rirs", "transfer", "pairs"] {
        fs::create_dir(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
    }

    let mut records = Vec::new();
    let mut rirs = Vec::with_capacity(opts.rooms);
    for (i, split) in room_splits.iter().enumerate() {
        let (class, spec) = room_spec(opts.seed, i);
        let ir = image_source_rir(&spec)?;
        let id = format!("rir{i:03}");
        let wav = format!("rirs/{id}.wav");
        let meta = format!("rirs/{id}.json");
        write_wav(&ir.clip, &root.join(&wav))?;
        let sidecar = RirMeta {
            id: id.clone(),
            split: *split,
            size_class: class,
            rt60_sabine: sabine_rt60(&spec)?,
            samples: ir.clip.len(),
            truncated_images: ir.truncated,
            room: spec,
        };
        write_json_atomic(&root.join(&meta), &sidecar).map_err(|e| Error::io(root.join(&meta), e))?;
        records.push(Record::Rir {
            id: id.clone(),
            split: *split,
            wav,
            meta,
        });
        rirs.push(NamedRir::new(id, ir)?);
    }
    let mut named = Vec::with_capacity(clips.len());
    for ((id, source, clip), split) in clips.into_iter().zip(&clip_splits) {
        records.push(Record::Dry {
            id: id.clone(),
            split: *split,
            source,
            samples: clip.len(),
        });
        named.push(NamedClip { id, clip });
    }

    let pools: Vec<(Vec<NamedClip>, Vec<NamedRir>)> = Split::ALL
        .iter()
        .map(|s| (per_split(&named, &clip_splits, *s), per_split(&rirs, &room_splits, *s)))
        .collect();
    let pool_of = |split: Split| &pools[split as usize];

    for (k, split) in example_splits.iter().enumerate() {
        let (pool, rooms) = pool_of(*split);
        let seed = child_seed(opts.seed, STREAM_TRANSFER, k as u64);
        let mut rng = rng_from(seed);
        let (a, b) = pick_pair(pool, false, &mut rng);
        let (ri, rj) = pick_pair(rooms, false, &mut rng);
        let ex = build_transfer_example(a, b, ri, rj, &cfg, &mut rng)?;
        let stem = format!("transfer/{k:06}");
        let (input, cond, target) = (
            format!("{stem}_input.spec1"),
            format!("{stem}_cond.spec1"),
            format!("{stem}_target.spec1"),
        );
        write_spec1(&ex.input_spec, &root.join(&input))?;
        write_spec1(&ex.cond_spec, &root.join(&cond))?;
        write_spec1(&ex.target_spec, &root.join(&target))?;
        records.push(Record::Transfer {
            index: k,
            split: *split,
            seed,
            input,
            cond,
            target,
            ids: ex.ids,
            offsets: ex.offsets,
        });
    }

    for (k, split) in pair_splits.iter().enumerate() {
        let (pool, rooms) = pool_of(*split);
        let seed = child_seed(opts.seed, STREAM_PAIR, k as u64);
        let pair = build_pair_example(pool, rooms, &cfg, &AugmentParams::disabled(), &mut rng_from(seed))?;
        let (spec1, spec2) = (format!("pairs/{k:06}_a.spec1"), format!("pairs/{k:06}_b.spec1"));
        write_spec1(&pair.spec1, &root.join(&spec1))?;
        write_spec1(&pair.spec2, &root.join(&spec2))?;
        records.push(Record::Pair {
            index: k,
            split: *split,
            seed,
            spec1,
            spec2,
            label: pair.label,
            pair_kind: pair.kind,
            audio: pair.audio,
            rirs: pair.rirs,
        });
    }

    let manifest = Manifest {
        header: Header {
            format: FORMAT.into(),
            version: 1,
            seed: opts.seed,
            rooms: opts.rooms,
            dry_clips: named.len(),
            examples: opts.examples,
            pairs: opts.pairs,
        },
        records,
    };
    write_manifest(root, &manifest)?;
    fs::rename(root, &opts.out).map_err(|e| Error::io(&opts.out, e))?;
    Ok(BuildSummary {
        out: opts.out.clone(),
        rooms: counts(&room_splits),
        dry_clips: counts(&clip_splits),
        examples: counts(&example_splits),
        pairs: counts(&pair_splits),
    })
}
