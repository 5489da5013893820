//! Denoising diffusion model over normalized decision vectors.
//!
//! Data are mapped to `[-1, 1]` through the problem box, corrupted with a
//! linear variance schedule, and a small MLP learns to predict the injected
//! noise. Ancestral sampling maps pure noise back to the box.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_encoding, Adam, Graph, Mlp, ParameterSet, Tensor};
use crate::rng::Rng;

/// Width of the sinusoidal step embedding fed to the denoiser.
pub const TIME_EMBED_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub learning_rate: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            epochs: 200,
            batch_size: 16,
            hidden: 64,
            learning_rate: 1e-3,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("diffusion steps, batch and width must be positive".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_end < 1.0 && self.beta_start <= self.beta_end) {
            return Err(Error::Config(format!(
                "beta schedule [{}, {}] must satisfy 0 < start <= end < 1",
                self.beta_start, self.beta_end
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("diffusion learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Variance schedule indexed by step `t ∈ 1..=T`; index 0 is the clean data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "diffusion step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product of `alpha` up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `(1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }
}

/// `x_t = √ᾱ_t x0 + √(1-ᾱ_t) eps`.
pub fn forward_marginal(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::Dimension {
            expected: x0.len(),
            got: eps.len(),
            context: "noise vector",
        });
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One ancestral step `x_t -> x_{t-1}` given predicted noise and fresh noise `z`
/// (ignored at `t = 1`).
pub fn reverse_step(schedule: &NoiseSchedule, x_t: &[f64], t: usize, eps_hat: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    schedule.check(t)?;
    let beta = schedule.beta(t);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = if t > 1 { schedule.posterior_variance(t).sqrt() } else { 0.0 };
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), z)| (x - coef * e) * inv_sqrt_alpha + sigma * z)
        .collect())
}

/// Noise-prediction callback: `(x_t rows, steps) -> predicted noise rows`.
pub type NoisePredictor<'a> = dyn Fn(&[Vec<f64>], &[usize]) -> Result<Vec<Vec<f64>>> + 'a;

/// Monte-Carlo denoising loss: batch mean of `‖eps - eps_hat(x_t, t)‖²`.
pub fn ddpm_loss(batch: &[Vec<f64>], schedule: &NoiseSchedule, predictor: &NoisePredictor<'_>, rng: &mut Rng) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("diffusion batch"));
    }
    let (xt, steps, eps) = corrupt(batch, schedule, rng)?;
    let pred = predictor(&xt, &steps)?;
    let total: f64 = pred
        .iter()
        .zip(&eps)
        .map(|(p, e)| p.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(total / batch.len() as f64)
}

type Corrupted = (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>);

fn corrupt(batch: &[Vec<f64>], schedule: &NoiseSchedule, rng: &mut Rng) -> Result<Corrupted> {
    let mut xt = Vec::with_capacity(batch.len());
    let mut steps = Vec::with_capacity(batch.len());
    let mut eps = Vec::with_capacity(batch.len());
    for x0 in batch {
        let t = rng.random_range(1..=schedule.steps());
        let e: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
        xt.push(forward_marginal(schedule, x0, t, &e)?);
        steps.push(t);
        eps.push(e);
    }
    Ok((xt, steps, eps))
}

/// MLP noise predictor `[x_t, embed(t)] -> eps_hat`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    params: ParameterSet,
    net: Mlp,
    dim: usize,
    time_table: Vec<Vec<f64>>,
}

impl Denoiser {
    pub fn new(dim: usize, config: &DiffusionConfig, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("denoiser dimension must be positive".into()));
        }
        let mut params = ParameterSet::new();
        let h = config.hidden;
        let net = Mlp::new(&mut params, "denoiser", &[dim + TIME_EMBED_DIM, h, h, dim], rng);
        let time_table = (0..=config.steps)
            .map(|t| sinusoidal_encoding(t as f64, TIME_EMBED_DIM))
            .collect::<Result<_>>()?;
        Ok(Self {
            params,
            net,
            dim,
            time_table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn network_input(&self, xt: &[Vec<f64>], steps: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(xt.len() * (self.dim + TIME_EMBED_DIM));
        for (x, &t) in xt.iter().zip(steps) {
            if x.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: x.len(),
                    context: "denoiser input",
                });
            }
            let emb = self
                .time_table
                .get(t)
                .ok_or_else(|| Error::InvalidArgument(format!("diffusion step {t} beyond schedule")))?;
            data.extend_from_slice(x);
            data.extend_from_slice(emb);
        }
        Tensor::matrix(xt.len(), self.dim + TIME_EMBED_DIM, data)
    }

    pub fn predict(&self, xt: &[Vec<f64>], steps: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(self.network_input(xt, steps)?);
        let y = self.net.forward(&mut g, &self.params, x)?;
        Ok(g.value(y).to_rows())
    }

    /// One Adam step on a minibatch; returns the batch loss before the step.
    fn train_step(&mut self, batch: &[Vec<f64>], schedule: &NoiseSchedule, opt: &mut Adam, rng: &mut Rng) -> Result<f64> {
        let (xt, steps, eps) = corrupt(batch, schedule, rng)?;
        let mut g = Graph::new();
        let x = g.constant(self.network_input(&xt, &steps)?);
        let target = g.constant(Tensor::from_rows(&eps)?);
        let y = self.net.forward(&mut g, &self.params, x)?;
        let mse = g.mse(y, target)?;
        // Per-entry mean times width equals the batch mean of squared norms.
        let loss = g.scale(mse, self.dim as f64);
        let value = g.value(loss).item();
        g.backward(loss, &mut self.params)?;
        opt.step(&mut self.params)?;
        Ok(value)
    }

    /// Ancestral sampling of `n` normalized vectors.
    pub fn sample_normalized(&self, schedule: &NoiseSchedule, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let mut x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..self.dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        for t in (1..=schedule.steps()).rev() {
            let steps = vec![t; n];
            let eps = self.predict(&x, &steps)?;
            for (xi, ei) in x.iter_mut().zip(&eps) {
                let z: Vec<f64> = if t > 1 {
                    (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
                } else {
                    vec![0.0; self.dim]
                };
                *xi = reverse_step(schedule, xi, t, ei, &z)?;
            }
        }
        Ok(x)
    }
}

/// Per-epoch mean training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Map a box to `[-1, 1]`.
pub fn normalize(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| 2.0 * (v - l) / (u - l) - 1.0)
        .collect()
}

/// Map `[-1, 1]` back to the box, clipping to its bounds.
pub fn denormalize(z: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| (l + (v + 1.0) * 0.5 * (u - l)).clamp(*l, *u))
        .collect()
}

/// Fresh denoiser fitted to `data` (raw decision vectors inside the box).
pub fn train(
    data: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
    config: &DiffusionConfig,
    rng: &mut Rng,
) -> Result<(Denoiser, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("diffusion training set"));
    }
    let dim = lower.len();
    let normalized: Vec<Vec<f64>> = data
        .iter()
        .map(|x| {
            if x.len() != dim {
                Err(Error::Dimension {
                    expected: dim,
                    got: x.len(),
                    context: "diffusion training vector",
                })
            } else {
                Ok(normalize(x, lower, upper))
            }
        })
        .collect::<Result<_>>()?;
    let schedule = config.schedule()?;
    let mut model = Denoiser::new(dim, config, rng)?;
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    let mut report = TrainReport::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| normalized[i].clone()));
            sum += model.train_step(&batch, &schedule, &mut opt, rng)?;
            count += 1;
        }
        report.epoch_losses.push(sum / count as f64);
    }
    Ok((model, report))
}

/// Draw `n` decision vectors inside the box.
pub fn sample(
    model: &Denoiser,
    config: &DiffusionConfig,
    n: usize,
    lower: &[f64],
    upper: &[f64],
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let schedule = config.schedule()?;
    let z = model.sample_normalized(&schedule, n, rng)?;
    Ok(z.iter().map(|v| denormalize(v, lower, upper)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn schedule_products() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.1]).unwrap();
        assert!((s.alpha_bar(2) - 0.81).abs() < 1e-15);
        let x = forward_marginal(&s, &[1.0, -2.0], 2, &[0.0, 0.0]).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15 && (x[1] + 1.8).abs() < 1e-15);
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!(forward_marginal(&s, &[0.0], 3, &[0.0]).is_err());
        assert!(forward_marginal(&s, &[0.0], 0, &[0.0]).is_err());
    }

    #[test]
    fn default_schedule_decays() {
        let s = DiffusionConfig::default().schedule().unwrap();
        for t in 1..=s.steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        // ᾱ_50 for the 50-step linear schedule: product of (1 - β_t)
        assert!(s.alpha_bar(50) < 0.7 && s.alpha_bar(50) > 0.55);
    }

    #[test]
    fn one_reverse_step_recovers_point_mass() {
        let s = DiffusionConfig::default().schedule().unwrap();
        let c = [0.3, -0.7];
        let eps = [1.3, 0.4];
        let x1 = forward_marginal(&s, &c, 1, &eps).unwrap();
        let ab = s.alpha_bar(1);
        let eps_opt: Vec<f64> = x1
            .iter()
            .zip(&c)
            .map(|(x, c)| (x - ab.sqrt() * c) / (1.0 - ab).sqrt())
            .collect();
        let x0 = reverse_step(&s, &x1, 1, &eps_opt, &[9.0, 9.0]).unwrap();
        for (a, b) in x0.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_predictor_loss_is_dimension() {
        let s = DiffusionConfig::default().schedule().unwrap();
        let batch = vec![vec![0.2, -0.4, 0.9]; 4000];
        let mut rng = stream(1, Stream::Diffusion, 0);
        let zero = |x: &[Vec<f64>], _: &[usize]| Ok(vec![vec![0.0; 3]; x.len()]);
        let loss = ddpm_loss(&batch, &s, &zero, &mut rng).unwrap();
        assert!((loss - 3.0).abs() < 0.15, "loss {loss}");
    }

    #[test]
    fn samples_respect_bounds_and_differ() {
        let cfg = DiffusionConfig {
            epochs: 100,
            ..DiffusionConfig::default()
        };
        let mut rng = stream(4, Stream::Diffusion, 0);
        let data: Vec<Vec<f64>> = (0..20).map(|i| vec![0.1 + 0.04 * i as f64, 0.5]).collect();
        let (m, _) = train(&data, &[0.0, 0.0], &[1.0, 1.0], &cfg, &mut rng).unwrap();
        let xs = sample(&m, &cfg, 50, &[0.0, 0.0], &[1.0, 1.0], &mut rng).unwrap();
        assert!(xs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let mut distinct = 0;
        for (i, a) in xs.iter().enumerate() {
            if xs[..i].iter().all(|b| b != a) {
                distinct += 1;
            }
        }
        assert!(distinct >= 45);
    }
}
