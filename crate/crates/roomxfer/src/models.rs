//! Moving parameter stores and optimizer state in and out of CKPT1.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomxfer_core::evaluator::{EvaluatorArch, EvaluatorModel};
use roomxfer_core::optim::Adam;
use roomxfer_core::tensor::{ParamStore, Tensor};
use roomxfer_core::transfer::{TransferArch, TransferModel};

use crate::error::{Error, Result};
use crate::formats::{read_ckpt1, Checkpoint, NamedTensors};

pub const ADAM_M: &str = "adam.m";
pub const ADAM_V: &str = "adam.v";

pub fn store_tensors(store: &ParamStore<f32>) -> NamedTensors {
    store.iter().map(|(name, t)| (name.to_string(), t.clone())).collect()
}

/// Copies every tensor of `list` into `store`; names must match one to one.
pub fn load_store(store: &mut ParamStore<f32>, list: &NamedTensors, origin: &Path) -> Result<()> {
    if list.len() != store.len() {
        return Err(Error::Data(format!(
            "{}: holds {} tensors, the model has {}",
            origin.display(),
            list.len(),
            store.len()
        )));
    }
    for (name, tensor) in list {
        store
            .load(name, tensor.clone())
            .map_err(|e| Error::Data(format!("{}: {e}", origin.display())))?;
    }
    Ok(())
}

fn moments(store: &ParamStore<f32>, values: &[Vec<f32>]) -> NamedTensors {
    store
        .iter()
        .zip(values)
        .map(|((name, t), v)| (name.to_string(), Tensor { shape: t.shape.clone(), data: v.clone() }))
        .collect()
}

pub fn checkpoint(store: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Checkpoint {
    let blocks = adam
        .map(|a| {
            vec![
                (ADAM_M.to_string(), moments(store, &a.m)),
                (ADAM_V.to_string(), moments(store, &a.v)),
            ]
        })
        .unwrap_or_default();
    Checkpoint {
        params: store_tensors(store),
        blocks,
    }
}

/// Restores Adam moments from `ckpt`; `step` comes from the training state.
pub fn restore_adam(store: &ParamStore<f32>, ckpt: &Checkpoint, adam: &mut Adam<f32>, origin: &Path) -> Result<()> {
    for (block, slot) in [(ADAM_M, &mut adam.m), (ADAM_V, &mut adam.v)] {
        let list = ckpt
            .block(block)
            .ok_or_else(|| Error::Data(format!("{}: missing optimizer block `{block}`", origin.display())))?;
        let mut shadow = store.clone();
        load_store(&mut shadow, list, origin)?;
        *slot = shadow.iter().map(|(_, t)| t.data.clone()).collect();
    }
    Ok(())
}

pub fn load_transfer(path: &Path) -> Result<TransferModel<f32>> {
    let ckpt = read_ckpt1(path)?;
    let arch = TransferArch {
        dropout: 0.0,
        ..TransferArch::default()
    };
    let mut model = TransferModel::new(arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_store(&mut model.params, &ckpt.params, path)?;
    Ok(model)
}

pub fn load_evaluator(path: &Path) -> Result<EvaluatorModel<f32>> {
    let ckpt = read_ckpt1(path)?;
    let mut model = EvaluatorModel::new(EvaluatorArch::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_store(&mut model.params, &ckpt.params, path)?;
    Ok(model)
}
