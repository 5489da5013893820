use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::error::{Error, Result};

/// Adam with optional per-parameter learning rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    lr: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        Self {
            lr: vec![lr; params.len()],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Override the rate of every parameter whose name starts with `prefix`.
    /// Returns how many parameters matched.
    pub fn set_lr_for_prefix(&mut self, params: &ParameterSet, prefix: &str, lr: f64) -> usize {
        let mut hits = 0;
        for (slot, p) in self.lr.iter_mut().zip(params.iter()) {
            if p.name.starts_with(prefix) {
                *slot = lr;
                hits += 1;
            }
        }
        hits
    }

    pub fn lr_of(&self, index: usize) -> f64 {
        self.lr[index]
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: params.len(),
                context: "optimizer parameter count",
            });
        }
        if params.iter().any(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let lr = self.lr[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.data().to_vec();
            for (j, (w, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Tensor::row_vector(vec![1.0, -2.0]));
        ps.get_mut(id).grad = Tensor::row_vector(vec![3.0, -0.5]);
        let mut opt = Adam::new(&ps, 0.1);
        opt.step(&mut ps).unwrap();
        let w = ps.value(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(ps.grad(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn prefix_rates() {
        let mut ps = ParameterSet::new();
        ps.add("ela.a", Tensor::scalar(0.0));
        ps.add("q.a", Tensor::scalar(0.0));
        let mut opt = Adam::new(&ps, 1e-4);
        assert_eq!(opt.set_lr_for_prefix(&ps, "ela.", 1e-5), 1);
        assert_eq!(opt.lr_of(0), 1e-5);
        assert_eq!(opt.lr_of(1), 1e-4);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Tensor::scalar(5.0));
        let mut opt = Adam::new(&ps, 0.1);
        for _ in 0..500 {
            let w = ps.value(id).item();
            ps.get_mut(id).grad = Tensor::scalar(2.0 * (w - 1.5));
            opt.step(&mut ps).unwrap();
        }
        assert!((ps.value(id).item() - 1.5).abs() < 1e-2);
    }
}
