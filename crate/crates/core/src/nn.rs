//! Layers built on the [`tensor`](crate::tensor) graph.
//!
//! Layers hold only [`ParamId`]s; the tensors live in a shared
//! [`ParamStore`]. Sequences are token-major: `[tokens, dim]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, TensorError, Var};

type Result<T> = core::result::Result<T, TensorError>;

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| T::of(rng.random_range(-a..=a))).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot(&[inp, out], inp, out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out]));
        Self { w, b, inp, out }
    }

    /// `[n, in] -> [n, out]`, or `[in] -> [out]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let vector = g.shape(x).len() == 1;
        let x = if vector { g.reshape(x, &[1, self.inp])? } else { x };
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w)?;
        let y = g.add_broadcast(y, b)?;
        if vector {
            g.reshape(y, &[self.out])
        } else {
            Ok(y)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let kk = kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            glorot(&[out_ch, in_ch, kernel, kernel], in_ch * kk, out_ch * kk, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_ch]));
        Self { w, b, stride, pad }
    }

    /// `[C, H, W] -> [O, Ho, Wo]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one()));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]));
        Self { gain, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        model_dim: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Self {
        let inner = heads * head_dim;
        Self {
            q: Linear::new(store, &format!("{name}.q"), model_dim, inner, rng),
            k: Linear::new(store, &format!("{name}.k"), model_dim, inner, rng),
            v: Linear::new(store, &format!("{name}.v"), model_dim, inner, rng),
            o: Linear::new(store, &format!("{name}.o"), inner, model_dim, rng),
            heads,
            head_dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.forward_with_weights(g, x).map(|(y, _)| y)
    }

    /// Also returns each head's `[tokens, tokens]` attention matrix.
    pub fn forward_with_weights<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let s = g.shape(x);
        if s.len() != 2 || s[0] == 0 || s[1] != self.q.inp {
            return Err(TensorError::Shape {
                op: "multi_head_attention",
                left: s.to_vec(),
                right: alloc::vec![self.q.inp],
            });
        }
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let scale = T::of(1.0 / libm::sqrt(self.head_dim as f64));
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let at = h * self.head_dim;
            let qh = g.slice(q, 1, at, self.head_dim)?;
            let kh = g.slice(k, 1, at, self.head_dim)?;
            let vh = g.slice(v, 1, at, self.head_dim)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, scale);
            let a = g.softmax(scores, 1)?;
            weights.push(a);
            outs.push(g.matmul(a, vh)?);
        }
        let cat = g.concat(&outs, 1)?;
        Ok((self.o.forward(g, cat)?, weights))
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDims {
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: BlockDims,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dims.model_dim),
            attn: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                dims.model_dim,
                dims.heads,
                dims.head_dim,
                rng,
            ),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dims.model_dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dims.model_dim, dims.ffn_dim, rng),
            dropout: dims.dropout,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let h = g.dropout(h, self.dropout);
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        let h = g.dropout(h, self.dropout);
        g.add(x, h)
    }
}

/// `[max_len, dim]` table: even columns `sin(p / 10000^(i/dim))`, odd
/// columns the matching `cos`. An odd `dim` ends on a sin column.
pub fn sinusoidal_positions<T: Real>(max_len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(max_len * dim);
    for p in 0..max_len {
        for i in 0..dim {
            let pair = (i / 2 * 2) as f64;
            let angle = p as f64 / libm::pow(10_000.0, pair / dim as f64);
            data.push(T::of(if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            }));
        }
    }
    Tensor {
        shape: alloc::vec![max_len, dim],
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(rename = "minmax")]
    MinMax,
    Mae,
    Mse,
}

impl LossKind {
    pub fn parse(s: &str) -> core::result::Result<Self, String> {
        match s {
            "minmax" => Ok(LossKind::MinMax),
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(format!("unknown loss kind `{other}` (expected minmax, mae or mse)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::MinMax => "minmax",
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        }
    }
}

/// Scalar loss between frame-major `[frames, bins]` grids.
///
/// `minmax` sums, over frames, the largest absolute deviation across bins.
pub fn loss_dispatch<T: Real>(
    g: &mut Graph<'_, T>,
    kind: LossKind,
    target: Var,
    predicted: Var,
) -> Result<Var> {
    let diff = g.sub(predicted, target)?;
    Ok(match kind {
        LossKind::MinMax => {
            if g.shape(diff).len() != 2 {
                return Err(TensorError::Shape {
                    op: "minmax",
                    left: g.shape(diff).to_vec(),
                    right: alloc::vec![0, 0],
                });
            }
            let a = g.abs(diff);
            let m = g.max_axis(a, 1)?;
            g.sum(m)
        }
        LossKind::Mae => {
            let a = g.abs(diff);
            g.mean(a)
        }
        LossKind::Mse => {
            let sq = g.mul(diff, diff)?;
            g.mean(sq)
        }
    })
}

/// Cross-entropy of `[classes]` logits against `label`.
pub fn cross_entropy<T: Real>(g: &mut Graph<'_, T>, logits: Var, label: usize) -> Result<Var> {
    let n = g.shape(logits).iter().product::<usize>();
    if g.shape(logits).len() != 1 || label >= n {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: "expected 1-D logits and a label below the class count",
        });
    }
    let lp = g.log_softmax(logits, 0)?;
    let mut onehot = Tensor::zeros(&[n]);
    onehot.data[label] = -T::one();
    let mask = g.constant(onehot);
    let picked = g.mul(lp, mask)?;
    Ok(g.sum(picked))
}
