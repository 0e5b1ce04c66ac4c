//! Siamese same/different acoustic-space scorer.
//!
//! Both spectrograms go through one CNN encoder; the signed difference of the
//! 128-dim embeddings feeds a two-layer head whose class 1 means "different
//! space".

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TransferExample;
use crate::dsp::{LogSpectrogram, PATCH_BINS, PATCH_FRAMES};
use crate::nn::{cross_entropy, Conv2d, Linear};
use crate::tensor::{Graph, ParamStore, Real, Tensor, TensorError, Var};
use crate::transfer::{TransferError, TransferModel, INPUT_OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorArch {
    pub bins: usize,
    pub frames: usize,
    pub channels: [usize; 4],
    pub embed_dim: usize,
    pub head_dim: usize,
}

impl Default for EvaluatorArch {
    fn default() -> Self {
        Self {
            bins: PATCH_BINS,
            frames: PATCH_FRAMES,
            channels: [16, 32, 64, 128],
            embed_dim: 128,
            head_dim: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluatorModel<T> {
    pub arch: EvaluatorArch,
    pub convs: Vec<Conv2d>,
    pub embed: Linear,
    pub hidden: Linear,
    pub logits: Linear,
    pub params: ParamStore<T>,
}

impl<T: Real> EvaluatorModel<T> {
    pub fn new<R: Rng + ?Sized>(arch: EvaluatorArch, rng: &mut R) -> Result<Self, TensorError> {
        if arch.bins == 0 || arch.frames == 0 || arch.embed_dim == 0 || arch.head_dim == 0 || arch.channels.contains(&0) {
            return Err(TensorError::Invalid {
                op: "evaluator_arch",
                msg: "all dimensions must be positive",
            });
        }
        let mut params = ParamStore::new();
        let mut convs = Vec::with_capacity(4);
        let mut c_in = 1;
        for (i, &c) in arch.channels.iter().enumerate() {
            convs.push(Conv2d::new(&mut params, &format!("encoder.conv{i}"), c_in, c, 3, 2, 1, rng));
            c_in = c;
        }
        let embed = Linear::new(&mut params, "encoder.embed", c_in, arch.embed_dim, rng);
        let hidden = Linear::new(&mut params, "head.hidden", arch.embed_dim, arch.head_dim, rng);
        let logits = Linear::new(&mut params, "head.logits", arch.head_dim, 2, rng);
        Ok(Self {
            arch,
            convs,
            embed,
            hidden,
            logits,
            params,
        })
    }

    fn spec_var(&self, g: &mut Graph<'_, T>, spec: &LogSpectrogram) -> Result<Var, TensorError> {
        if spec.bins != self.arch.bins || spec.frames != self.arch.frames {
            return Err(TensorError::Shape {
                op: "evaluator input",
                left: vec![spec.bins, spec.frames],
                right: vec![self.arch.bins, self.arch.frames],
            });
        }
        Ok(g.constant(Tensor::from_f32(&[1, spec.bins, spec.frames], &spec.data)?))
    }

    /// `spec: [1, bins, frames]` raw log-magnitudes to `[embed_dim]`.
    pub fn embed_var(&self, g: &mut Graph<'_, T>, spec: Var) -> Result<Var, TensorError> {
        let h = g.add_scalar(spec, T::of(INPUT_OFFSET));
        let mut h = g.scale(h, T::of(1.0 / INPUT_OFFSET));
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        let h = g.global_avg_pool(h)?;
        self.embed.forward(g, h)
    }

    /// Two-class logits for the pair.
    pub fn logits_var(&self, g: &mut Graph<'_, T>, a: Var, b: Var) -> Result<Var, TensorError> {
        let ea = self.embed_var(g, a)?;
        let eb = self.embed_var(g, b)?;
        let d = g.sub(ea, eb)?;
        let h = self.hidden.forward(g, d)?;
        let h = g.relu(h);
        self.logits.forward(g, h)
    }

    /// Cross-entropy loss node and the logits for a labelled pair.
    pub fn loss_var(
        &self,
        g: &mut Graph<'_, T>,
        a: &LogSpectrogram,
        b: &LogSpectrogram,
        label: u8,
    ) -> Result<(Var, Var), TensorError> {
        let a = self.spec_var(g, a)?;
        let b = self.spec_var(g, b)?;
        let logits = self.logits_var(g, a, b)?;
        Ok((cross_entropy(g, logits, label as usize)?, logits))
    }

    pub fn embed(&self, spec: &LogSpectrogram) -> Result<Vec<f32>, TensorError> {
        let mut g = Graph::with_params(&self.params);
        let s = self.spec_var(&mut g, spec)?;
        let e = self.embed_var(&mut g, s)?;
        Ok(g.value(e).to_f32())
    }

    /// Probability that the two spectrograms come from different spaces.
    pub fn score_pair(&self, a: &LogSpectrogram, b: &LogSpectrogram) -> Result<f64, TensorError> {
        let mut g = Graph::with_params(&self.params);
        let (a, b) = (self.spec_var(&mut g, a)?, self.spec_var(&mut g, b)?);
        let logits = self.logits_var(&mut g, a, b)?;
        let p = g.softmax(logits, 0)?;
        Ok(g.value(p).data[1].f64())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub ids: crate::dataset::TransferIds,
    pub before: f64,
    pub after: f64,
    /// `score_pair(cond, input)`, the reversed order of `before`.
    pub before_reversed: f64,
    pub after_reversed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub mean_before: f64,
    pub mean_after: f64,
    pub examples: Vec<ExampleScore>,
}

/// Scores every example before (input vs conditioning) and after transfer
/// (prediction vs conditioning).
pub fn evaluate_transfer<T: Real, U: Real>(
    model: &TransferModel<T>,
    evaluator: &EvaluatorModel<U>,
    examples: &[TransferExample],
) -> Result<TransferReport, TransferError> {
    if examples.is_empty() {
        return Err(TransferError::Tensor(TensorError::Invalid {
            op: "evaluate_transfer",
            msg: "no examples to evaluate",
        }));
    }
    let mut scores = Vec::with_capacity(examples.len());
    for ex in examples {
        let predicted = model.transfer(&ex.input_spec, &ex.cond_spec)?.predicted;
        scores.push(ExampleScore {
            ids: ex.ids.clone(),
            before: evaluator.score_pair(&ex.input_spec, &ex.cond_spec)?,
            after: evaluator.score_pair(&predicted, &ex.cond_spec)?,
            before_reversed: evaluator.score_pair(&ex.cond_spec, &ex.input_spec)?,
            after_reversed: evaluator.score_pair(&ex.cond_spec, &predicted)?,
        });
    }
    let n = scores.len() as f64;
    Ok(TransferReport {
        mean_before: scores.iter().map(|s| s.before).sum::<f64>() / n,
        mean_after: scores.iter().map(|s| s.after).sum::<f64>() / n,
        examples: scores,
    })
}
