//! Attention-based landscape encoder.
//!
//! The archive is arranged as an `M × N × 2` tensor of (normalized objective,
//! constraint level) pairs, embedded to width `h`, passed through an attention
//! block across solutions and one across objectives, and mean-pooled to a
//! fixed-length state. Decision vectors are deliberately not part of the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_encoding, Graph, LayerNorm, Linear, MultiHeadAttention, ParameterSet, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElaConfig {
    pub hidden: usize,
    pub heads: usize,
}

impl Default for ElaConfig {
    fn default() -> Self {
        Self { hidden: 16, heads: 1 }
    }
}

impl ElaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "ELA width {} must be a positive multiple of {} heads",
                self.hidden, self.heads
            )));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config("ELA width must be even for positional codes".into()));
        }
        Ok(())
    }

    /// Length of the emitted state: the embedding plus the budget fraction.
    pub fn state_len(&self) -> usize {
        self.hidden + 1
    }
}

/// Encoder input: pairs stored row-major with rows ordered objective-major,
/// i.e. row `m * n + i` holds `(f'_m(x_i), level_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElaInput {
    pairs: Tensor,
    n: usize,
    m: usize,
    budget_fraction: f64,
}

impl ElaInput {
    pub fn population(&self) -> usize {
        self.n
    }

    pub fn objectives(&self) -> usize {
        self.m
    }

    pub fn budget_fraction(&self) -> f64 {
        self.budget_fraction
    }

    /// Shape as `(M, N, 2)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.n, 2)
    }

    /// Entry `(objective, solution)`.
    pub fn pair(&self, objective: usize, solution: usize) -> (f64, f64) {
        let r = self.pairs.row(objective * self.n + solution);
        (r[0], r[1])
    }

    pub fn pairs(&self) -> &Tensor {
        &self.pairs
    }
}

/// Min-max normalize each objective over the archive and pair it with levels.
/// A constant objective maps to 0.5.
pub fn build_input_tensor(objectives: &[Vec<f64>], levels: &[f64], evaluations: usize, budget: usize) -> Result<ElaInput> {
    let n = objectives.len();
    if n == 0 {
        return Err(Error::Empty("archive for landscape encoding"));
    }
    if levels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: levels.len(),
            context: "levels per archived solution",
        });
    }
    let m = objectives[0].len();
    if m == 0 {
        return Err(Error::Empty("objective vector"));
    }
    if let Some(bad) = objectives.iter().find(|y| y.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            got: bad.len(),
            context: "objectives per solution",
        });
    }
    if objectives.iter().flatten().chain(levels).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("landscape encoder input"));
    }
    if budget == 0 || evaluations > budget {
        return Err(Error::InvalidArgument(format!(
            "evaluations {evaluations} must lie within a positive budget {budget}"
        )));
    }
    let mut data = Vec::with_capacity(m * n * 2);
    for k in 0..m {
        let (lo, hi) = objectives
            .iter()
            .map(|y| y[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = hi - lo;
        for (y, &level) in objectives.iter().zip(levels) {
            let f = if span > 0.0 { (y[k] - lo) / span } else { 0.5 };
            data.push(f);
            data.push(level);
        }
    }
    Ok(ElaInput {
        pairs: Tensor::matrix(m * n, 2, data)?,
        n,
        m,
        budget_fraction: evaluations as f64 / budget as f64,
    })
}

/// Fixed-length optimization state: pooled embedding plus budget fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub embedding: Vec<f64>,
    pub budget_fraction: f64,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.embedding.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.embedding.clone();
        v.push(self.budget_fraction);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.iter().all(|v| v.is_finite()) && self.budget_fraction.is_finite()
    }
}

/// Residual attention block: `g = LN(x + MHSA(x))`, `out = LN(g + FF(g))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttentionBlock {
    attention: MultiHeadAttention,
    norm1: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    norm2: LayerNorm,
}

impl AttentionBlock {
    fn new(params: &mut ParameterSet, name: &str, config: &ElaConfig, rng: &mut Rng) -> Self {
        let h = config.hidden;
        Self {
            attention: MultiHeadAttention::new(params, &format!("{name}.mhsa"), h, config.heads, rng),
            norm1: LayerNorm::new(params, &format!("{name}.ln1"), h),
            ff_in: Linear::new(params, &format!("{name}.ff1"), h, 4 * h, rng),
            ff_out: Linear::new(params, &format!("{name}.ff2"), 4 * h, h, rng),
            norm2: LayerNorm::new(params, &format!("{name}.ln2"), h),
        }
    }

    fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var, group: usize) -> Result<Var> {
        let a = self.attention.forward(g, params, x, group)?;
        let r = g.add(x, a)?;
        let gnorm = self.norm1.forward(g, params, r)?;
        let f = self.ff_in.forward(g, params, gnorm)?;
        let f = g.relu(f);
        let v = self.ff_out.forward(g, params, f)?;
        let r2 = g.add(gnorm, v)?;
        self.norm2.forward(g, params, r2)
    }
}

/// Encoder weights live in a caller-owned [`ParameterSet`] under `prefix`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElaEncoder {
    config: ElaConfig,
    embed: Linear,
    across_solutions: AttentionBlock,
    across_objectives: AttentionBlock,
}

impl ElaEncoder {
    pub fn new(params: &mut ParameterSet, prefix: &str, config: ElaConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            embed: Linear::new(params, &format!("{prefix}.embed"), 2, config.hidden, rng),
            across_solutions: AttentionBlock::new(params, &format!("{prefix}.attn1"), &config, rng),
            across_objectives: AttentionBlock::new(params, &format!("{prefix}.attn2"), &config, rng),
        })
    }

    pub fn config(&self) -> &ElaConfig {
        &self.config
    }

    /// Emit the `1 × (h+1)` state node for `input`.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, input: &ElaInput) -> Result<Var> {
        let (m, n, h) = (input.m, input.n, self.config.hidden);
        let x = g.constant(input.pairs.clone());
        let e = self.embed.forward(g, params, x)?;
        let e = self.across_solutions.forward(g, params, e, n)?;
        // Reorder rows from (objective, solution) to (solution, objective).
        let to_solution_major: Vec<usize> = (0..n).flat_map(|i| (0..m).map(move |k| k * n + i)).collect();
        let t = g.gather_rows(e, to_solution_major)?;
        let pe = positional_block(n, m, h)?;
        let pe = g.constant(pe);
        let t = g.add(t, pe)?;
        let t = self.across_objectives.forward(g, params, t, m)?;
        // Back to objective-major so the population axis is pooled first.
        let to_objective_major: Vec<usize> = (0..m).flat_map(|k| (0..n).map(move |i| i * m + k)).collect();
        let t = g.gather_rows(t, to_objective_major)?;
        let per_objective = g.group_mean(t, n)?;
        let pooled = g.group_mean(per_objective, m)?;
        let budget = g.constant(Tensor::scalar(input.budget_fraction));
        g.concat_cols(pooled, budget)
    }

    /// Graph-free convenience wrapper returning the state.
    pub fn encode(&self, params: &ParameterSet, input: &ElaInput) -> Result<StateVector> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, params, input)?;
        let mut v = g.value(out).data().to_vec();
        let budget_fraction = v.pop().expect("state has budget entry");
        let s = StateVector {
            embedding: v,
            budget_fraction,
        };
        if !s.is_finite() {
            return Err(Error::NonFinite("landscape embedding"));
        }
        Ok(s)
    }
}

/// Positional codes for rows ordered (solution, objective): row `i*m + k`
/// receives the code of objective index `k`.
fn positional_block(n: usize, m: usize, h: usize) -> Result<Tensor> {
    let codes: Vec<Vec<f64>> = (0..m).map(|k| sinusoidal_encoding(k as f64, h)).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * m * h);
    for _ in 0..n {
        for c in &codes {
            data.extend_from_slice(c);
        }
    }
    Tensor::matrix(n * m, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    fn encoder(seed: u64) -> (ElaEncoder, ParameterSet) {
        let mut ps = ParameterSet::new();
        let mut rng = stream(seed, Stream::Init, 0);
        let enc = ElaEncoder::new(&mut ps, "ela", ElaConfig::default(), &mut rng).unwrap();
        (enc, ps)
    }

    fn random_archive(n: usize, m: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = stream(seed, Stream::Lhs, 9);
        let y = (0..n).map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let l = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        (y, l)
    }

    #[test]
    fn tensor_shape_and_normalization() {
        let y = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 2.0]];
        let inp = build_input_tensor(&y, &[0.1, 0.2, 0.3], 10, 300).unwrap();
        assert_eq!(inp.shape(), (2, 3, 2));
        assert_eq!(inp.pair(0, 0), (0.0, 0.1));
        assert_eq!(inp.pair(0, 1), (0.5, 0.2));
        assert_eq!(inp.pair(0, 2), (1.0, 0.3));
        for i in 0..3 {
            assert_eq!(inp.pair(1, i).0, 0.5);
        }
        assert!(build_input_tensor(&[], &[], 0, 300).is_err());
    }

    #[test]
    fn output_length_is_hidden_plus_one() {
        let (enc, ps) = encoder(1);
        for (n, m) in [(1, 2), (7, 3), (20, 5)] {
            let (y, l) = random_archive(n, m, n as u64);
            let s = enc.encode(&ps, &build_input_tensor(&y, &l, 50, 300).unwrap()).unwrap();
            assert_eq!(s.len(), 17);
            assert!((s.budget_fraction - 50.0 / 300.0).abs() < 1e-15);
        }
    }

    #[test]
    fn population_permutation_invariance() {
        let (enc, ps) = encoder(2);
        let (y, l) = random_archive(12, 3, 4);
        let base = enc.encode(&ps, &build_input_tensor(&y, &l, 100, 300).unwrap()).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let yp: Vec<_> = perm.iter().map(|&i| y[i].clone()).collect();
        let lp: Vec<_> = perm.iter().map(|&i| l[i]).collect();
        let other = enc.encode(&ps, &build_input_tensor(&yp, &lp, 100, 300).unwrap()).unwrap();
        for (a, b) in base.embedding.iter().zip(&other.embedding) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn positive_affine_objective_map_is_invisible() {
        let (enc, ps) = encoder(3);
        let (mut y, l) = random_archive(9, 2, 5);
        let base = enc.encode(&ps, &build_input_tensor(&y, &l, 0, 300).unwrap()).unwrap();
        for row in &mut y {
            row[1] = 4.0 * row[1] + 7.0;
        }
        let other = enc.encode(&ps, &build_input_tensor(&y, &l, 0, 300).unwrap()).unwrap();
        for (a, b) in base.embedding.iter().zip(&other.embedding) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
