use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with gradient buffers of matching shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform matrix `fan_in × fan_out`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut crate::rng::Rng,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data).expect("shape matches"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Add `scale * other`'s gradients into this set's gradients.
    pub fn accumulate_grads(&mut self, other: &ParameterSet, scale: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (p, q) in self.entries.iter_mut().zip(&other.entries) {
            for (g, h) in p.grad.data_mut().iter_mut().zip(q.grad.data()) {
                *g += scale * h;
            }
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Dimension {
                expected: self.entries.len(),
                got: other.entries.len(),
                context: "parameter count",
            });
        }
        for (p, q) in self.entries.iter().zip(&other.entries) {
            if p.value.shape() != q.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{}` has shape {:?}, other has {:?}",
                    p.name,
                    p.value.shape(),
                    q.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self ← tau · source + (1 - tau) · self`, elementwise.
    pub fn blend_from(&mut self, source: &ParameterSet, tau: f64) -> Result<()> {
        self.check_compatible(source)?;
        for (p, q) in self.entries.iter_mut().zip(&source.entries) {
            for (a, &b) in p.value.data_mut().iter_mut().zip(q.value.data()) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
        Ok(())
    }

    /// Largest absolute elementwise difference in parameter values.
    pub fn max_abs_diff(&self, other: &ParameterSet) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(p, q)| p.value.max_abs_diff(&q.value))
            .fold(0.0, f64::max))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }
}
