use alloc::string::String;
use alloc::vec::Vec;

use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrites the tensor named `name`; shapes must agree.
    pub fn load(&mut self, name: &str, tensor: Tensor<T>) -> Result<(), TensorError> {
        let id = self.find(name).ok_or(TensorError::Invalid {
            op: "load",
            msg: "unknown parameter name",
        })?;
        let slot = &mut self.tensors[id.0];
        if slot.shape != tensor.shape {
            return Err(TensorError::Shape {
                op: "load",
                left: slot.shape.clone(),
                right: tensor.shape,
            });
        }
        *slot = tensor;
        Ok(())
    }

    /// Same parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .tensors
                .iter()
                .map(|t| alloc::vec![T::zero(); t.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Global L2 norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.grads
                .iter()
                .flatten()
                .map(|v| v.f64() * v.f64())
                .sum::<f64>(),
        )
    }

    /// Rescales so the global norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(T::of(max_norm / norm));
        }
        norm
    }
}
