//! Adam and the plateau learning-rate schedule.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamGrads, ParamId, ParamStore, Real, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam; moments are kept per parameter in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, t)| alloc::vec![T::zero(); t.len()])
            .collect();
        Self {
            hyper,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with learning rate `lr`. A non-finite gradient aborts
    /// before anything is modified.
    pub fn update(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &ParamGrads<T>,
        lr: f64,
    ) -> Result<(), TensorError> {
        if self.m.len() != store.len() || grads.grads.len() != store.len() {
            return Err(TensorError::Invalid {
                op: "adam",
                msg: "optimizer state does not match the parameters",
            });
        }
        for id in store.ids() {
            let g = grads.get(id);
            if g.len() != store.get(id).len() || self.m[id.index()].len() != g.len() {
                return Err(TensorError::Shape {
                    op: "adam",
                    left: store.get(id).shape.clone(),
                    right: alloc::vec![g.len()],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGrad(String::from(store.name(id))));
            }
        }
        self.step += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for i in 0..store.len() {
            let id = ParamId(i);
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = &mut store.get_mut(id).data;
            for j in 0..p.len() {
                let gj = g[j].f64();
                let mj = beta1 * m[j].f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let step = lr * (mj / c1) / (libm::sqrt(vj / c2) + eps);
                p[j] = T::of(p[j].f64() - step);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` epochs without an improvement
/// larger than `threshold`, never going below `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub floor: f64,
    pub factor: f64,
    pub patience: u32,
    pub threshold: f64,
    pub best: Option<f64>,
    pub stale: u32,
}

impl PlateauSchedule {
    pub fn new(lr: f64, floor: f64, factor: f64, patience: u32) -> Self {
        Self {
            lr,
            floor,
            factor,
            patience,
            threshold: 1e-4,
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch's monitored loss and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(best) if loss >= best - self.threshold => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.floor);
                    self.stale = 0;
                }
            }
            _ => {
                self.best = Some(loss);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn plateau_halves_then_floors() {
        let mut s = PlateauSchedule::new(2e-4, 1e-6, 0.5, 3);
        let mut trace = alloc::vec![];
        for _ in 0..40 {
            trace.push(s.observe(1.0));
        }
        assert_eq!(trace[0], 2e-4);
        assert_eq!(trace[3], 1e-4);
        assert_eq!(trace[6], 5e-5);
        assert_eq!(*trace.last().unwrap(), 1e-6);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn plateau_resets_on_improvement() {
        let mut s = PlateauSchedule::new(1.0, 0.01, 0.5, 2);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(0.5);
        assert_eq!(s.observe(0.5), 1.0);
        assert_eq!(s.observe(0.5), 0.5);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::full(&[2], 1.0));
        let mut adam = Adam::new(&store, AdamHyper::default());
        let mut g = ParamGrads::zeros_like(&store);
        g.grads[0][1] = f64::NAN;
        assert!(adam.update(&mut store, &g, 0.1).is_err());
        assert_eq!(store.get(ParamId(0)).data, [1.0, 1.0]);
        assert_eq!(adam.step, 0);
    }
}
