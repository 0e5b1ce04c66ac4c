//! Transfer evaluation reports and the conditioning-mismatch check.

use std::fs::File;
use std::io;
use std::path::Path;

use rand::Rng;
use roomxfer_core::dataset::{child_seed, rng_from, Split, TransferExample};
use roomxfer_core::dsp::minmax_loss;
use roomxfer_core::evaluator::{evaluate_transfer, EvaluatorModel, ExampleScore};
use roomxfer_core::transfer::TransferModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::{Dataset, MANIFEST};
use crate::models::{load_evaluator, load_transfer};

pub const SCHEMA: &str = "roomxfer-evaluation/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hashes {
    pub model: String,
    pub evaluator: String,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub example: usize,
    pub mismatch: usize,
    pub matched_loss: f64,
    pub mismatched_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningCheck {
    pub trials: usize,
    pub passed: usize,
    pub rate: f64,
    pub outcomes: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub split: Split,
    pub count: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub mean_before_reversed: f64,
    pub mean_after_reversed: f64,
    pub hashes: Hashes,
    pub conditioning: Option<ConditioningCheck>,
    pub examples: Vec<ExampleScore>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// For each trial, compares the loss against the true target when
/// conditioning on the matching recording with the loss when conditioning
/// on another example recorded in a different room. A trial passes when
/// the matching conditioning gives the strictly lower loss.
pub fn conditioning_check(
    model: &TransferModel<f32>,
    examples: &[TransferExample],
    trials: usize,
    seed: u64,
) -> Result<ConditioningCheck> {
    if examples.is_empty() || trials == 0 {
        return Err(Error::Data("conditioning check needs examples and trials".into()));
    }
    let mut outcomes = Vec::with_capacity(trials);
    for t in 0..trials {
        let i = t % examples.len();
        let ex = &examples[i];
        let others: Vec<usize> = (0..examples.len())
            .filter(|&k| examples[k].ids.rir_j != ex.ids.rir_j)
            .collect();
        if others.is_empty() {
            return Err(Error::Data("every example shares one target room".into()));
        }
        let k = others[rng_from(child_seed(seed, t as u64, 0)).random_range(0..others.len())];
        let matched = model.transfer(&ex.input_spec, &ex.cond_spec)?.predicted;
        let mismatched = model.transfer(&ex.input_spec, &examples[k].cond_spec)?.predicted;
        outcomes.push(Trial {
            example: i,
            mismatch: k,
            matched_loss: minmax_loss(&ex.target_spec, &matched)?,
            mismatched_loss: minmax_loss(&ex.target_spec, &mismatched)?,
        });
    }
    let passed = outcomes.iter().filter(|o| o.matched_loss < o.mismatched_loss).count();
    Ok(ConditioningCheck {
        trials,
        passed,
        rate: passed as f64 / trials as f64,
        outcomes,
    })
}

pub fn load_examples(ds: &Dataset, split: Split, limit: Option<usize>) -> Result<Vec<TransferExample>> {
    ds.manifest
        .transfers(split)
        .into_iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|r| ds.load_transfer(r))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub split: Split,
    pub limit: Option<usize>,
    /// Conditioning-mismatch trials; 0 skips the check.
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            limit: None,
            trials: 0,
            seed: 0,
        }
    }
}

pub fn evaluate_models(
    model_path: &Path,
    evaluator_path: &Path,
    dataset: &Path,
    opts: &EvaluateOptions,
) -> Result<EvaluationReport> {
    let model = load_transfer(model_path)?;
    let evaluator = load_evaluator(evaluator_path)?;
    let ds = Dataset::open(dataset)?;
    let examples = load_examples(&ds, opts.split, opts.limit)?;
    if examples.is_empty() {
        return Err(Error::Data(format!(
            "{}: no {} transfer examples",
            dataset.display(),
            opts.split.name()
        )));
    }
    let hashes = Hashes {
        model: sha256_file(model_path)?,
        evaluator: sha256_file(evaluator_path)?,
        manifest: sha256_file(&dataset.join(MANIFEST))?,
    };
    build_report(&model, &evaluator, &examples, opts, hashes)
}

pub fn build_report(
    model: &TransferModel<f32>,
    evaluator: &EvaluatorModel<f32>,
    examples: &[TransferExample],
    opts: &EvaluateOptions,
    hashes: Hashes,
) -> Result<EvaluationReport> {
    let report = evaluate_transfer(model, evaluator, examples)?;
    let n = report.examples.len() as f64;
    let conditioning = match opts.trials {
        0 => None,
        t => Some(conditioning_check(model, examples, t, opts.seed)?),
    };
    Ok(EvaluationReport {
        schema: SCHEMA.into(),
        split: opts.split,
        count: report.examples.len(),
        mean_before: report.mean_before,
        mean_after: report.mean_after,
        mean_before_reversed: report.examples.iter().map(|e| e.before_reversed).sum::<f64>() / n,
        mean_after_reversed: report.examples.iter().map(|e| e.after_reversed).sum::<f64>() / n,
        hashes,
        conditioning,
        examples: report.examples,
    })
}
