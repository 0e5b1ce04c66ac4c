//! Conditioning-token transformer that predicts a log-spectrogram residual.
//!
//! A small CNN turns the conditioning spectrogram into a 257-dim signature.
//! The signature is prepended to the 300 input frames (each frame one token),
//! three pre-norm transformer blocks run over the 301 tokens, and tokens
//! `1..=300` of the output form the residual that is added to the input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::dsp::{
    griffin_lim, patch_log_spectrogram, DspError, LogSpectrogram, StftConfig, PATCH_BINS,
    PATCH_FRAMES,
};
use crate::nn::{sinusoidal_positions, BlockDims, Conv2d, LayerNorm, Linear, TransformerBlock};
use crate::tensor::{Graph, ParamStore, Real, Tensor, TensorError, Var};

/// Fixed affine map applied to log-magnitudes before any network sees them:
/// `(x + OFFSET) / OFFSET`. It sends the log floor of `ln(1e-5)` to about -1.
pub const INPUT_OFFSET: f64 = 5.76;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("clip is {have} samples, at least {need} are required")]
    TooShort { have: usize, need: usize },
}

type Result<T> = core::result::Result<T, TransferError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferArch {
    pub bins: usize,
    pub frames: usize,
    pub enc_channels: [usize; 4],
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for TransferArch {
    fn default() -> Self {
        Self {
            bins: PATCH_BINS,
            frames: PATCH_FRAMES,
            enc_channels: [16, 32, 64, 128],
            layers: 3,
            heads: 8,
            head_dim: 32,
            ffn_dim: 512,
            dropout: 0.1,
        }
    }
}

impl TransferArch {
    pub fn validate(&self) -> core::result::Result<(), TensorError> {
        let dims = [
            self.bins,
            self.frames,
            self.layers,
            self.heads,
            self.head_dim,
            self.ffn_dim,
        ];
        if dims.contains(&0) || self.enc_channels.contains(&0) {
            return Err(TensorError::Invalid {
                op: "transfer_arch",
                msg: "all dimensions must be positive",
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TensorError::Invalid {
                op: "transfer_arch",
                msg: "dropout must lie in [0, 1)",
            });
        }
        Ok(())
    }
}

/// Four stride-2 3x3 conv blocks, a 1x1 conv to the token width, then global
/// average pooling.
#[derive(Debug, Clone)]
pub struct SignatureEncoder {
    pub convs: Vec<Conv2d>,
    pub proj: Conv2d,
}

impl SignatureEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: [usize; 4],
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("{name}.conv{i}"), c_in, c, 3, 2, 1, rng));
            c_in = c;
        }
        let proj = Conv2d::new(store, &format!("{name}.proj"), c_in, out_dim, 1, 1, 0, rng);
        Self { convs, proj }
    }

    /// `spec: [1, bins, frames]` (already scaled) to `[out_dim]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, spec: Var) -> core::result::Result<Var, TensorError> {
        let mut h = spec;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        let h = self.proj.forward(g, h)?;
        g.global_avg_pool(h)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualTransformer {
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub out: Linear,
}

/// Graph handles produced by one forward pass of [`TransferModel`].
#[derive(Debug, Clone, Copy)]
pub struct TransferVars {
    pub embedding: Var,
    pub tokens: Var,
    pub residual: Var,
    pub predicted: Var,
}

/// Dense results of [`TransferModel::transfer`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutput {
    /// The input grid as the model saw it.
    pub input: LogSpectrogram,
    pub predicted: LogSpectrogram,
    pub residual: LogSpectrogram,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct TransferModel<T> {
    pub arch: TransferArch,
    pub encoder: SignatureEncoder,
    pub transformer: ResidualTransformer,
    pub params: ParamStore<T>,
    positions: Tensor<T>,
}

impl<T: Real> TransferModel<T> {
    pub fn new<R: Rng + ?Sized>(arch: TransferArch, rng: &mut R) -> core::result::Result<Self, TensorError> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let encoder = SignatureEncoder::new(&mut params, "encoder", arch.enc_channels, arch.bins, rng);
        let dims = BlockDims {
            model_dim: arch.bins,
            heads: arch.heads,
            head_dim: arch.head_dim,
            ffn_dim: arch.ffn_dim,
            dropout: arch.dropout,
        };
        let blocks = (0..arch.layers)
            .map(|i| TransformerBlock::new(&mut params, &format!("block{i}"), dims, rng))
            .collect();
        let final_norm = LayerNorm::new(&mut params, "final_norm", arch.bins);
        let out = Linear::new(&mut params, "out", arch.bins, arch.bins, rng);
        Ok(Self {
            arch,
            encoder,
            transformer: ResidualTransformer {
                blocks,
                final_norm,
                out,
            },
            params,
            positions: sinusoidal_positions(arch.frames, arch.bins),
        })
    }

    /// Zeroes the final output projection so the residual is exactly zero.
    pub fn zero_residual(&mut self) {
        let out = &self.transformer.out;
        for id in [out.w, out.b] {
            self.params.get_mut(id).data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Builds the forward pass on `g`, which must read `self.params`.
    ///
    /// `input` is frame-major `[frames, bins]` and `cond` bin-major
    /// `[1, bins, frames]`, both as raw log-magnitudes.
    pub fn forward(&self, g: &mut Graph<'_, T>, input: Var, cond: Var) -> core::result::Result<TransferVars, TensorError> {
        let (bins, frames) = (self.arch.bins, self.arch.frames);
        if g.shape(input) != [frames, bins] {
            return Err(TensorError::Shape {
                op: "transfer input",
                left: g.shape(input).to_vec(),
                right: vec![frames, bins],
            });
        }
        if g.shape(cond) != [1, bins, frames] {
            return Err(TensorError::Shape {
                op: "transfer conditioning",
                left: g.shape(cond).to_vec(),
                right: vec![1, bins, frames],
            });
        }
        let embedding = self.encode(g, cond)?;
        let x = scaled(g, input);
        let pos = g.constant(self.positions.clone());
        let content = g.add(x, pos)?;
        let cond_token = g.reshape(embedding, &[1, bins])?;
        let mut tokens = g.concat(&[cond_token, content], 0)?;
        for block in &self.transformer.blocks {
            tokens = block.forward(g, tokens)?;
        }
        let h = self.transformer.final_norm.forward(g, tokens)?;
        let out = self.transformer.out.forward(g, h)?;
        let residual = g.slice(out, 0, 1, frames)?;
        let predicted = g.add(input, residual)?;
        Ok(TransferVars {
            embedding,
            tokens: out,
            residual,
            predicted,
        })
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, cond: Var) -> core::result::Result<Var, TensorError> {
        let c = scaled(g, cond);
        self.encoder.forward(g, c)
    }

    /// Inference with dropout disabled.
    pub fn transfer(&self, input: &LogSpectrogram, cond: &LogSpectrogram) -> Result<TransferOutput> {
        let (bins, frames) = (self.arch.bins, self.arch.frames);
        input.ensure_shape(bins, frames)?;
        cond.ensure_shape(bins, frames)?;
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(Tensor::from_f32(&[frames, bins], &input.to_frame_major())?);
        let c = g.constant(Tensor::from_f32(&[1, bins, frames], &cond.data)?);
        let vars = self.forward(&mut g, x, c)?;
        let grid = |v: Var| LogSpectrogram::from_frame_major(&g.value(v).to_f32(), frames, input.config);
        Ok(TransferOutput {
            input: input.clone(),
            predicted: grid(vars.predicted)?,
            residual: grid(vars.residual)?,
            embedding: g.value(vars.embedding).to_f32(),
        })
    }

    /// Splits `x` into consecutive 3 s windows (the last one zero-padded) and
    /// transfers each against the same conditioning patch.
    pub fn transfer_chunks(&self, x: &AudioClip, cond: &AudioClip, cfg: &StftConfig) -> Result<Vec<TransferOutput>> {
        let window = cfg.hop * self.arch.frames;
        for clip in [x, cond] {
            clip.check_rate(cfg.sample_rate)?;
            clip.check_finite()?;
            if clip.len() < window {
                return Err(TransferError::TooShort {
                    have: clip.len(),
                    need: window,
                });
            }
        }
        let cond_spec = patch_log_spectrogram(cond, cfg)?;
        let chunks = x.len().div_ceil(window);
        (0..chunks)
            .map(|k| {
                let start = k * window;
                let end = (start + window).min(x.len());
                let piece = AudioClip {
                    samples: x.samples[start..end].to_vec(),
                    sample_rate: x.sample_rate,
                };
                let spec = patch_log_spectrogram(&piece, cfg)?;
                self.transfer(&spec, &cond_spec)
            })
            .collect()
    }

    /// Full waveform path: chunked transfer, time concatenation, Griffin-Lim,
    /// then trimming back to the input length.
    pub fn transfer_waveform(
        &self,
        x: &AudioClip,
        cond: &AudioClip,
        cfg: &StftConfig,
        gl_iterations: usize,
    ) -> Result<AudioClip> {
        let parts = self.transfer_chunks(x, cond, cfg)?;
        let grids: Vec<LogSpectrogram> = parts.into_iter().map(|p| p.predicted).collect();
        let full = LogSpectrogram::concat_frames(&grids)?;
        let out = griffin_lim(&full, gl_iterations)?;
        Ok(out.clip.fit_to(x.len()))
    }
}

fn scaled<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Var {
    let shifted = g.add_scalar(x, T::of(INPUT_OFFSET));
    g.scale(shifted, T::of(1.0 / INPUT_OFFSET))
}
