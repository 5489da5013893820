//! Fixed embeddings and graph-free reference implementations.

use super::kernels::softmax_in_place;
use crate::error::{Error, Result};

/// Sinusoidal position code: `[sin(p ω_0), cos(p ω_0), sin(p ω_1), ..]`
/// with `ω_i = 10000^(-2i/dim)`. `dim` must be even.
pub fn sinusoidal_encoding(position: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "sinusoidal encoding width must be even, got {dim}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        out.push((position * freq).sin());
        out.push((position * freq).cos());
    }
    Ok(out)
}

/// Row-wise normalization to zero mean and unit variance, no affine part.
pub fn layer_norm_rows(x: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.iter().map(|v| (v - mean) * is).collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Single-head attention weights `softmax(q kᵀ / √d)`.
pub fn attention_weights(q: &[Vec<f64>], k: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q.first().map_or(1, Vec::len).max(1) as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            softmax(&scores)
        })
        .collect()
}

/// Single-head attention `softmax(q kᵀ / √d) v`.
pub fn attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = attention_weights(q, k);
    let width = v.first().map_or(0, Vec::len);
    w.iter()
        .map(|wi| {
            let mut out = vec![0.0; width];
            for (p, vj) in wi.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += p * x;
                }
            }
            out
        })
        .collect()
}
