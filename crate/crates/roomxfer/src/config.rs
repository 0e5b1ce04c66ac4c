//! Training configuration read from JSON.
//!
//! Every field is checked on its own so that one run of the validator lists
//! every problem in the file. Relative paths are resolved against the
//! directory holding the config file.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use roomxfer_core::nn::LossKind;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

pub const CONFIG_DIR_ENV: &str = "ROOMXFER_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub msg: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.field, self.msg)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not valid JSON: {msg}")]
    Syntax { path: PathBuf, msg: String },
    #[error("{path}: invalid config:\n{}", list(.fields))]
    Fields { path: PathBuf, fields: Vec<FieldError> },
}

fn list(fields: &[FieldError]) -> String {
    fields.iter().map(|f| format!("  {f}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    /// Names of the offending fields, in file order of checking.
    pub fn field_names(&self) -> Vec<&str> {
        match self {
            ConfigError::Fields { fields, .. } => fields.iter().map(|f| f.field.as_str()).collect(),
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Validation,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_floor: f64,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    pub loss_kind: LossKind,
    pub dropout: f64,
    pub grad_clip: f64,
    /// Use at most this many training items.
    pub train_limit: Option<usize>,
    /// Use at most this many validation items; 0 skips validation.
    pub val_limit: Option<usize>,
    pub monitor: Monitor,
    /// Online pair augmentation (evaluator only).
    pub augment: bool,
    /// Permute training labels (evaluator null control).
    pub shuffle_labels: bool,
    /// Start the transfer model with a zeroed output projection.
    pub zero_init: bool,
    /// Continue from `checkpoint_dir` when a previous state exists.
    pub resume: bool,
}

impl TrainConfig {
    pub fn new(dataset: impl Into<PathBuf>, checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            checkpoint_dir: checkpoint_dir.into(),
            seed: 0,
            batch_size: 8,
            epochs: 10,
            lr_init: 2e-4,
            lr_floor: 1e-6,
            plateau_patience: 3,
            plateau_factor: 0.5,
            loss_kind: LossKind::MinMax,
            dropout: 0.1,
            grad_clip: 5.0,
            train_limit: None,
            val_limit: None,
            monitor: Monitor::Validation,
            augment: true,
            shuffle_labels: false,
            zero_init: true,
            resume: false,
        }
    }

    /// Cross-field invariants; field-level checks live in [`parse_config`].
    pub fn validate(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: String| {
            out.push(FieldError {
                field: field.into(),
                msg,
            })
        };
        if self.batch_size == 0 {
            bad("batch_size", "must be at least 1".into());
        }
        if self.epochs == 0 {
            bad("epochs", "must be at least 1".into());
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            bad("lr_init", format!("must be a positive number, got {}", self.lr_init));
        }
        if !(self.lr_floor.is_finite() && self.lr_floor > 0.0) {
            bad("lr_floor", format!("must be a positive number, got {}", self.lr_floor));
        } else if self.lr_floor > self.lr_init {
            bad("lr_floor", format!("{} exceeds lr_init {}", self.lr_floor, self.lr_init));
        }
        if self.plateau_patience == 0 {
            bad("plateau_patience", "must be at least 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            bad("plateau_factor", format!("must lie in (0, 1), got {}", self.plateau_factor));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad("dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            bad("grad_clip", format!("must be a positive number, got {}", self.grad_clip));
        }
        if self.train_limit == Some(0) {
            bad("train_limit", "must be at least 1".into());
        }
        if self.monitor == Monitor::Validation && self.val_limit == Some(0) {
            bad("monitor", "`validation` needs a validation set but val_limit is 0".into());
        }
        out
    }
}

struct Reader<'a> {
    map: &'a Map<String, Value>,
    errors: Vec<FieldError>,
}

impl Reader<'_> {
    fn bad(&mut self, field: &str, msg: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.into(),
            msg: msg.into(),
        });
    }

    fn get<T>(&mut self, field: &str, expect: &str, conv: impl Fn(&Value) -> Option<T>) -> Option<T> {
        let value = self.map.get(field)?;
        let out = conv(value);
        if out.is_none() {
            self.bad(field, format!("expected {expect}, got {value}"));
        }
        out
    }

    fn path(&mut self, field: &str) -> Option<PathBuf> {
        let p = self.get(field, "a path string", |v| v.as_str().map(PathBuf::from));
        if p.is_none() && !self.map.contains_key(field) {
            self.bad(field, "required field is missing");
        }
        match p {
            Some(p) if p.as_os_str().is_empty() => {
                self.bad(field, "must not be empty");
                None
            }
            p => p,
        }
    }

    fn uint(&mut self, field: &str) -> Option<u64> {
        self.get(field, "a non-negative integer", Value::as_u64)
    }

    fn usize(&mut self, field: &str) -> Option<usize> {
        self.uint(field).map(|v| v as usize)
    }

    fn num(&mut self, field: &str) -> Option<f64> {
        self.get(field, "a number", Value::as_f64)
    }

    fn flag(&mut self, field: &str) -> Option<bool> {
        self.get(field, "true or false", Value::as_bool)
    }
}

const FIELDS: &[&str] = &[
    "dataset",
    "checkpoint_dir",
    "seed",
    "batch_size",
    "epochs",
    "lr_init",
    "lr_floor",
    "plateau_patience",
    "plateau_factor",
    "loss_kind",
    "dropout",
    "grad_clip",
    "train_limit",
    "val_limit",
    "monitor",
    "augment",
    "shuffle_labels",
    "zero_init",
    "resume",
];

/// Parses config text; `origin` labels errors and anchors relative paths.
pub fn parse_config(text: &str, origin: &Path) -> Result<TrainConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        path: origin.to_path_buf(),
        msg: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(ConfigError::Fields {
            path: origin.to_path_buf(),
            fields: vec![FieldError {
                field: "<root>".into(),
                msg: "expected a JSON object".into(),
            }],
        });
    };
    let mut r = Reader {
        map: &map,
        errors: Vec::new(),
    };
    for key in map.keys() {
        if !FIELDS.contains(&key.as_str()) {
            r.bad(key, "unknown field");
        }
    }
    let base = origin.parent().unwrap_or(Path::new(""));
    let dataset = r.path("dataset").map(|p| base.join(p));
    let checkpoint_dir = r.path("checkpoint_dir").map(|p| base.join(p));
    let mut cfg = TrainConfig::new(
        dataset.clone().unwrap_or_default(),
        checkpoint_dir.clone().unwrap_or_default(),
    );
    if let Some(v) = r.uint("seed") {
        cfg.seed = v;
    }
    if let Some(v) = r.usize("batch_size") {
        cfg.batch_size = v;
    }
    if let Some(v) = r.usize("epochs") {
        cfg.epochs = v;
    }
    if let Some(v) = r.num("lr_init") {
        cfg.lr_init = v;
    }
    if let Some(v) = r.num("lr_floor") {
        cfg.lr_floor = v;
    }
    if let Some(v) = r.uint("plateau_patience") {
        cfg.plateau_patience = u32::try_from(v).unwrap_or(u32::MAX);
    }
    if let Some(v) = r.num("plateau_factor") {
        cfg.plateau_factor = v;
    }
    if let Some(v) = r.get("loss_kind", "a string", |v| v.as_str().map(str::to_owned)) {
        match LossKind::parse(&v) {
            Ok(kind) => cfg.loss_kind = kind,
            Err(msg) => r.bad("loss_kind", msg),
        }
    }
    if let Some(v) = r.num("dropout") {
        cfg.dropout = v;
    }
    if let Some(v) = r.num("grad_clip") {
        cfg.grad_clip = v;
    }
    cfg.train_limit = r.usize("train_limit");
    cfg.val_limit = r.usize("val_limit");
    if let Some(v) = r.get("monitor", "a string", |v| v.as_str().map(str::to_owned)) {
        match v.as_str() {
            "validation" => cfg.monitor = Monitor::Validation,
            "train" => cfg.monitor = Monitor::Train,
            other => r.bad("monitor", format!("expected `validation` or `train`, got `{other}`")),
        }
    }
    if let Some(v) = r.flag("augment") {
        cfg.augment = v;
    }
    if let Some(v) = r.flag("shuffle_labels") {
        cfg.shuffle_labels = v;
    }
    if let Some(v) = r.flag("zero_init") {
        cfg.zero_init = v;
    }
    if let Some(v) = r.flag("resume") {
        cfg.resume = v;
    }
    let mut errors = r.errors;
    let checked: Vec<String> = errors.iter().map(|e| e.field.clone()).collect();
    errors.extend(cfg.validate().into_iter().filter(|e| !checked.contains(&e.field)));
    if errors.is_empty() && dataset.is_some() && checkpoint_dir.is_some() {
        Ok(cfg)
    } else {
        Err(ConfigError::Fields {
            path: origin.to_path_buf(),
            fields: errors,
        })
    }
}

/// Finds a config file: the path itself, or failing that, the same relative
/// path under `$ROOMXFER_CONFIG_DIR`.
pub fn resolve_config_path(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(CONFIG_DIR_ENV) {
        Some(dir) if Path::new(&dir).join(path).exists() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let path = resolve_config_path(path);
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    parse_config(&text, &path)
}
