//! Training loops for the transfer model and the pair evaluator.
//!
//! Both share one loop: per-epoch shuffled mini-batches, gradients averaged
//! over the batch and clipped by global norm, Adam at the scheduled rate,
//! a plateau schedule fed by the monitored loss, and a checkpoint directory
//! holding `last.ckpt`, `best.ckpt`, `train_state.json`, `metrics.csv`,
//! `model.json` and, at the end, `summary.json`.
//!
//! Every random draw derives from the config seed and the position in the
//! run (epoch, optimizer step, item index), so resuming from `last.ckpt`
//! replays the uninterrupted run exactly.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use roomxfer_core::dataset::{augment_spectrogram, child_seed, rng_from, AugmentParams, Split};
use roomxfer_core::evaluator::{EvaluatorArch, EvaluatorModel};
use roomxfer_core::nn::{loss_dispatch, LossKind};
use roomxfer_core::optim::{Adam, AdamHyper, PlateauSchedule};
use roomxfer_core::tensor::{Graph, ParamGrads, ParamStore, Real, Tensor, Var};
use roomxfer_core::transfer::{TransferArch, TransferModel};
use serde::{Deserialize, Serialize};

use crate::config::{Monitor, TrainConfig};
use crate::error::{Error, Result};
use crate::formats::{read_ckpt1, write_ckpt1};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::manifest::{Dataset, PairItem, Record};
use crate::models::{checkpoint, load_store, restore_adam};

pub const STREAM_INIT: u64 = 10;
pub const STREAM_SHUFFLE: u64 = 11;
pub const STREAM_DROPOUT: u64 = 12;
pub const STREAM_AUGMENT: u64 = 13;
pub const STREAM_LABELS: u64 = 14;

pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const STATE_JSON: &str = "train_state.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MODEL_JSON: &str = "model.json";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transfer,
    Evaluator,
}

/// One metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub kind: ModelKind,
    /// Last completed epoch (1-based).
    pub epoch: usize,
    pub adam_step: u64,
    pub schedule: PlateauSchedule,
    pub best_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRow>,
    /// Largest pre-clip gradient norm seen in each epoch.
    pub grad_norm_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_loss: Option<f64>,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub lr_trace: Vec<f64>,
    /// Held-out test loss and accuracy of the best checkpoint.
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub history: Vec<EpochRow>,
}

impl TrainSummary {
    pub fn rows(&self, split: Split) -> Vec<&EpochRow> {
        self.history.iter().filter(|r| r.split == split.name()).collect()
    }
}

/// Static description written to `model.json`.
#[derive(Debug, Clone, Serialize)]
struct ModelCard<'a, A: Serialize> {
    kind: ModelKind,
    arch: &'a A,
    parameters: usize,
    config: &'a TrainConfig,
    init_seed: u64,
    train_items: usize,
    validation_items: usize,
}

#[derive(Debug, Clone, Copy)]
struct Position {
    epoch: usize,
    item: usize,
    training: bool,
}

/// Loss-graph construction for one item.
trait Objective {
    type Item;
    fn load(&self, ds: &Dataset, rec: &Record, pos: Position) -> Result<Self::Item>;
    /// Scalar loss and, for classifiers, whether the prediction was right.
    fn graph(&self, g: &mut Graph<'_, f32>, item: &Self::Item) -> Result<(Var, Option<bool>)>;
}

struct TransferObjective {
    model: TransferModel<f32>,
    loss: LossKind,
}

impl Objective for TransferObjective {
    type Item = roomxfer_core::dataset::TransferExample;

    fn load(&self, ds: &Dataset, rec: &Record, _: Position) -> Result<Self::Item> {
        ds.load_transfer(rec)
    }

    fn graph(&self, g: &mut Graph<'_, f32>, ex: &Self::Item) -> Result<(Var, Option<bool>)> {
        let (bins, frames) = (self.model.arch.bins, self.model.arch.frames);
        let input = g.constant(Tensor::from_f32(&[frames, bins], &ex.input_spec.to_frame_major())?);
        let cond = g.constant(Tensor::from_f32(&[1, bins, frames], &ex.cond_spec.data)?);
        let target = g.constant(Tensor::from_f32(&[frames, bins], &ex.target_spec.to_frame_major())?);
        let vars = self.model.forward(g, input, cond)?;
        Ok((loss_dispatch(g, self.loss, target, vars.predicted)?, None))
    }
}

struct EvaluatorObjective {
    model: EvaluatorModel<f32>,
    seed: u64,
    augment: Option<AugmentParams>,
    /// Replacement training labels, indexed by position in the train list.
    labels: Option<Vec<u8>>,
}

impl Objective for EvaluatorObjective {
    type Item = PairItem;

    fn load(&self, ds: &Dataset, rec: &Record, pos: Position) -> Result<PairItem> {
        let mut item = ds.load_pair(rec)?;
        if pos.training {
            if let Some(params) = &self.augment {
                let stream = child_seed(self.seed, STREAM_AUGMENT, pos.epoch as u64);
                let mut rng = rng_from(child_seed(stream, pos.item as u64, 0));
                item.spec1 = augment_spectrogram(&item.spec1, params, &mut rng);
                item.spec2 = augment_spectrogram(&item.spec2, params, &mut rng);
            }
            if let Some(labels) = &self.labels {
                item.label = labels[pos.item];
            }
        }
        Ok(item)
    }

    fn graph(&self, g: &mut Graph<'_, f32>, item: &PairItem) -> Result<(Var, Option<bool>)> {
        let (loss, logits) = self.model.loss_var(g, &item.spec1, &item.spec2, item.label)?;
        let l = &g.value(logits).data;
        let predicted = u8::from(l[1] > l[0]);
        Ok((loss, Some(predicted == item.label)))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn accuracy(hits: &[bool]) -> Option<f64> {
    (!hits.is_empty()).then(|| hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

fn scalar(g: &Graph<'_, f32>, v: Var) -> f64 {
    g.value(v).item().f64()
}

/// Loss and accuracy of `params` over `records`, without dropout.
fn evaluate<O: Objective>(
    obj: &O,
    params: &ParamStore<f32>,
    ds: &Dataset,
    records: &[&Record],
    epoch: usize,
) -> Result<(f64, Option<f64>)> {
    let mut losses = Vec::with_capacity(records.len());
    let mut hits = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let pos = Position {
            epoch,
            item: i,
            training: false,
        };
        let item = obj.load(ds, rec, pos)?;
        let mut g = Graph::with_params(params);
        let (loss, hit) = obj.graph(&mut g, &item)?;
        let l = scalar(&g, loss);
        if !l.is_finite() {
            return Err(Error::Numeric(format!("evaluation loss is {l} at item {i} (epoch {epoch})")));
        }
        losses.push(l);
        hits.extend(hit);
    }
    Ok((mean(&losses), accuracy(&hits)))
}

fn write_metrics(path: &Path, rows: &[EpochRow]) -> Result<()> {
    write_atomic(path, |file: &mut File| -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(file);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    })
    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn json_io<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json_atomic(path, value).map_err(|e| Error::io(path, e))
}

pub fn read_state(dir: &Path) -> Result<TrainState> {
    let path = dir.join(STATE_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_summary(dir: &Path) -> Result<TrainSummary> {
    let path = dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn limited<'a>(records: Vec<&'a Record>, limit: Option<usize>) -> Vec<&'a Record> {
    match limit {
        Some(n) => records.into_iter().take(n).collect(),
        None => records,
    }
}

/// Progress sink; receives one line per epoch.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

#[allow(clippy::too_many_arguments)]
fn fit<O: Objective>(
    cfg: &TrainConfig,
    kind: ModelKind,
    obj: &O,
    params: &mut ParamStore<f32>,
    ds: &Dataset,
    train: &[&Record],
    val: &[&Record],
    progress: Progress<'_>,
) -> Result<TrainState> {
    let dir = &cfg.checkpoint_dir;
    let mut adam = Adam::new(params, AdamHyper::default());
    let mut state = TrainState {
        kind,
        epoch: 0,
        adam_step: 0,
        schedule: PlateauSchedule::new(cfg.lr_init, cfg.lr_floor, cfg.plateau_factor, cfg.plateau_patience),
        best_loss: None,
        best_epoch: None,
        history: Vec::new(),
        grad_norm_max: Vec::new(),
    };
    if cfg.resume && dir.join(STATE_JSON).exists() {
        state = read_state(dir)?;
        if state.kind != kind {
            return Err(Error::Data(format!(
                "{}: holds a {:?} run, not {kind:?}",
                dir.display(),
                state.kind
            )));
        }
        let last = dir.join(LAST_CKPT);
        let ckpt = read_ckpt1(&last)?;
        load_store(params, &ckpt.params, &last)?;
        restore_adam(params, &ckpt, &mut adam, &last)?;
        adam.step = state.adam_step;
        progress(&format!("resuming after epoch {}", state.epoch));
    }
    let mut grads = ParamGrads::zeros_like(params);
    for epoch in state.epoch + 1..=cfg.epochs {
        let lr = state.schedule.lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from(child_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64)));
        let mut losses = Vec::with_capacity(train.len());
        let mut hits = Vec::new();
        let mut norm_max = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            let step = adam.step;
            for (j, &i) in batch.iter().enumerate() {
                let pos = Position {
                    epoch,
                    item: i,
                    training: true,
                };
                let item = obj.load(ds, train[i], pos)?;
                let mut g = if cfg.dropout > 0.0 {
                    let seed = child_seed(child_seed(cfg.seed, STREAM_DROPOUT, step), j as u64, 0);
                    Graph::training(params, rng_from(seed))
                } else {
                    Graph::with_params(params)
                };
                let (loss, hit) = obj.graph(&mut g, &item)?;
                let l = scalar(&g, loss);
                if !l.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training loss is {l} at epoch {epoch}, step {step}, item {i}"
                    )));
                }
                g.backward(loss)?.accumulate(params, &mut grads).map_err(|e| {
                    Error::Numeric(format!("{e} at epoch {epoch}, step {step}, item {i}"))
                })?;
                losses.push(l);
                hits.extend(hit);
            }
            grads.scale(1.0 / batch.len() as f32);
            let norm = grads.clip_norm(cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("gradient norm is {norm} at epoch {epoch}, step {step}")));
            }
            norm_max = norm_max.max(norm);
            adam.update(params, &grads, lr)?;
        }
        let train_loss = mean(&losses);
        state.history.push(EpochRow {
            epoch,
            split: Split::Train.name().into(),
            loss: train_loss,
            lr,
            accuracy: accuracy(&hits),
        });
        let mut monitored = train_loss;
        let mut line = format!("epoch {epoch}: lr {lr:.3e} train loss {train_loss:.6}");
        if let Some(a) = accuracy(&hits) {
            line += &format!(" acc {a:.4}");
        }
        if !val.is_empty() {
            let (val_loss, val_acc) = evaluate(obj, params, ds, val, epoch)?;
            state.history.push(EpochRow {
                epoch,
                split: Split::Validation.name().into(),
                loss: val_loss,
                lr,
                accuracy: val_acc,
            });
            line += &format!(" | validation loss {val_loss:.6}");
            if let Some(a) = val_acc {
                line += &format!(" acc {a:.4}");
            }
            if cfg.monitor == Monitor::Validation {
                monitored = val_loss;
            }
        }
        if state.best_loss.is_none_or(|b| monitored < b) {
            state.best_loss = Some(monitored);
            state.best_epoch = Some(epoch);
            write_ckpt1(&checkpoint(params, None), &dir.join(BEST_CKPT))?;
        }
        state.schedule.observe(monitored);
        state.epoch = epoch;
        state.adam_step = adam.step;
        state.grad_norm_max.push(norm_max);
        write_ckpt1(&checkpoint(params, Some(&adam)), &dir.join(LAST_CKPT))?;
        write_metrics(&dir.join(METRICS_CSV), &state.history)?;
        json_io(&dir.join(STATE_JSON), &state)?;
        progress(&line);
    }
    Ok(state)
}

fn prepare_dir(cfg: &TrainConfig) -> Result<Dataset> {
    let ds = Dataset::open(&cfg.dataset)?;
    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    Ok(ds)
}

fn summarize(
    kind: ModelKind,
    state: &TrainState,
    test: Option<(f64, Option<f64>)>,
    dir: &Path,
) -> Result<TrainSummary> {
    let train_rows: Vec<&EpochRow> = state.history.iter().filter(|r| r.split == "train").collect();
    let summary = TrainSummary {
        kind,
        epochs: state.epoch,
        best_epoch: state.best_epoch,
        best_loss: state.best_loss,
        first_train_loss: train_rows.first().map_or(f64::NAN, |r| r.loss),
        final_train_loss: train_rows.last().map_or(f64::NAN, |r| r.loss),
        lr_trace: train_rows.iter().map(|r| r.lr).collect(),
        test_loss: test.map(|t| t.0),
        test_accuracy: test.and_then(|t| t.1),
        history: state.history.clone(),
    };
    json_io(&dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

pub fn transfer_arch(cfg: &TrainConfig) -> TransferArch {
    TransferArch {
        dropout: cfg.dropout,
        ..TransferArch::default()
    }
}

pub fn init_transfer(cfg: &TrainConfig) -> Result<TransferModel<f32>> {
    let mut model = TransferModel::new(transfer_arch(cfg), &mut rng_from(child_seed(cfg.seed, STREAM_INIT, 0)))?;
    if cfg.zero_init {
        model.zero_residual();
    }
    Ok(model)
}

pub fn init_evaluator(cfg: &TrainConfig) -> Result<EvaluatorModel<f32>> {
    Ok(EvaluatorModel::new(
        EvaluatorArch::default(),
        &mut rng_from(child_seed(cfg.seed, STREAM_INIT, 1)),
    )?)
}

fn write_card<A: Serialize>(cfg: &TrainConfig, kind: ModelKind, arch: &A, params: usize, train: usize, val: usize) -> Result<()> {
    let card = ModelCard {
        kind,
        arch,
        parameters: params,
        config: cfg,
        init_seed: cfg.seed,
        train_items: train,
        validation_items: val,
    };
    json_io(&cfg.checkpoint_dir.join(MODEL_JSON), &card)
}

pub fn train_transfer(cfg: &TrainConfig, progress: Progress<'_>) -> Result<TrainSummary> {
    let ds = prepare_dir(cfg)?;
    let train = limited(ds.manifest.transfers(Split::Train), cfg.train_limit);
    let val = limited(ds.manifest.transfers(Split::Validation), cfg.val_limit);
    if train.is_empty() {
        return Err(Error::Data(format!("{}: no training transfer examples", cfg.dataset.display())));
    }
    let mut model = init_transfer(cfg)?;
    let mut params = std::mem::take(&mut model.params);
    write_card(cfg, ModelKind::Transfer, &model.arch, params.numel(), train.len(), val.len())?;
    let obj = TransferObjective {
        model,
        loss: cfg.loss_kind,
    };
    let state = fit(cfg, ModelKind::Transfer, &obj, &mut params, &ds, &train, &val, progress)?;
    summarize(ModelKind::Transfer, &state, None, &cfg.checkpoint_dir)
}

pub fn train_evaluator(cfg: &TrainConfig, progress: Progress<'_>) -> Result<TrainSummary> {
    let ds = prepare_dir(cfg)?;
    let train = limited(ds.manifest.pairs(Split::Train), cfg.train_limit);
    let val = limited(ds.manifest.pairs(Split::Validation), cfg.val_limit);
    let test = ds.manifest.pairs(Split::Test);
    if train.is_empty() {
        return Err(Error::Data(format!("{}: no training pairs", cfg.dataset.display())));
    }
    let labels = cfg.shuffle_labels.then(|| {
        let mut labels: Vec<u8> = train
            .iter()
            .map(|r| match r {
                Record::Pair { label, .. } => *label,
                _ => 0,
            })
            .collect();
        labels.shuffle(&mut rng_from(child_seed(cfg.seed, STREAM_LABELS, 0)));
        labels
    });
    let mut model = init_evaluator(cfg)?;
    let mut params = std::mem::take(&mut model.params);
    write_card(cfg, ModelKind::Evaluator, &model.arch, params.numel(), train.len(), val.len())?;
    let obj = EvaluatorObjective {
        model,
        seed: cfg.seed,
        augment: cfg.augment.then(AugmentParams::default),
        labels,
    };
    let state = fit(cfg, ModelKind::Evaluator, &obj, &mut params, &ds, &train, &val, progress)?;
    let best = cfg.checkpoint_dir.join(BEST_CKPT);
    load_store(&mut params, &read_ckpt1(&best)?.params, &best)?;
    let test_metrics = if test.is_empty() {
        None
    } else {
        Some(evaluate(&obj, &params, &ds, &test, state.epoch)?)
    };
    summarize(ModelKind::Evaluator, &state, test_metrics, &cfg.checkpoint_dir)
}

/// Accuracy of an evaluator over the pairs of `split`, with stored labels.
pub fn pair_accuracy(model: &EvaluatorModel<f32>, ds: &Dataset, split: Split) -> Result<Option<f64>> {
    let mut hits = Vec::new();
    for rec in ds.manifest.pairs(split) {
        let item = ds.load_pair(rec)?;
        let p = model.score_pair(&item.spec1, &item.spec2)?;
        hits.push(u8::from(p > 0.5) == item.label);
    }
    Ok(accuracy(&hits))
}

pub fn checkpoint_path(dir: &Path, best: bool) -> PathBuf {
    dir.join(if best { BEST_CKPT } else { LAST_CKPT })
}
