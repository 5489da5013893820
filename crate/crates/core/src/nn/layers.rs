//! Parameterized building blocks that emit graph nodes.

use serde::{Deserialize, Serialize};

use super::{Graph, ParamId, ParameterSet, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Affine map `x W + b` with `W: in × out`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    pub fn new(params: &mut ParameterSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let weight = params.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let bias = params.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParameterSet, name: &str, width: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Tensor::filled(&[1, width], 1.0)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[1, width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let gain = g.param(params, self.gain);
        let bias = g.param(params, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head self-attention restricted to consecutive row blocks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(params: &mut ParameterSet, name: &str, width: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            query: Linear::new(params, &format!("{name}.q"), width, width, rng),
            key: Linear::new(params, &format!("{name}.k"), width, width, rng),
            value: Linear::new(params, &format!("{name}.v"), width, width, rng),
            output: Linear::new(params, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Every block of `group` rows attends within itself.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var, group: usize) -> Result<Var> {
        let q = self.query.forward(g, params, x)?;
        let k = self.key.forward(g, params, x)?;
        let v = self.value.forward(g, params, x)?;
        let a = g.attention(q, k, v, group, self.heads)?;
        self.output.forward(g, params, a)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`; needs at least two entries.
    pub fn new(params: &mut ParameterSet, name: &str, widths: &[usize], rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, params, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
