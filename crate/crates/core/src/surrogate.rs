//! Gaussian-process surrogates with grid-searched hyperparameters.
//!
//! Targets are standardized per output, so the signal variance is the target
//! variance and the noise grid is relative to it. Inputs are expected in the
//! unit box; [`SurrogateSet`] takes care of that mapping.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmcci::ConstraintHandler;
use crate::problems::{EvaluatedSolution, ProblemSpec};

/// Hyperparameter grid searched by log marginal likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Lengthscales are these factors times `√d`.
    pub lengthscale_factors: Vec<f64>,
    /// Noise variances relative to the target variance; the smallest acts as floor.
    pub noise_levels: Vec<f64>,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscale_factors: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            noise_levels: vec![1e-6, 1e-4, 1e-2],
        }
    }
}

/// Jitter added to the diagonal when a factorization fails, tried in order.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

/// Unit-variance squared-exponential kernel.
pub fn se_kernel(a: &[f64], b: &[f64], lengthscale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (lengthscale * lengthscale)).exp()
}

/// Factorization of `R + noise·I` for one grid cell, shared across outputs.
struct Factor {
    lengthscale: f64,
    noise: f64,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

fn factorize(x: &[Vec<f64>], lengthscale: f64, noise: f64) -> Result<Factor> {
    let n = x.len();
    let base = DMatrix::from_fn(n, n, |i, j| se_kernel(&x[i], &x[j], lengthscale));
    for jitter in JITTER_LADDER {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += noise + jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return Ok(Factor {
                lengthscale,
                noise: noise + jitter,
                chol,
                log_det,
            });
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Fitted single-output GP (posterior mean only).
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Arc<Vec<Vec<f64>>>,
    weights: Vec<f64>,
    lengthscale: f64,
    noise: f64,
    mean: f64,
    scale: f64,
    log_marginal: f64,
}

/// One grid cell's score, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub lengthscale: f64,
    pub noise: f64,
    pub log_marginal: f64,
}

fn standardize(y: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, scale, DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale)))
}

fn validate(x: &[Vec<f64>], outputs: &[&[f64]]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a GP needs at least two training points, got {}",
            x.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("GP inputs must share a positive width".into()));
    }
    for y in outputs {
        if y.len() != x.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: y.len(),
                context: "GP targets",
            });
        }
    }
    if x.iter().flatten().chain(outputs.iter().flat_map(|y| y.iter())).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data"));
    }
    Ok(())
}

/// Fit one GP per target vector on shared inputs, factorizing each grid cell once.
pub fn fit_many(x: &[Vec<f64>], outputs: &[&[f64]], config: &GpConfig) -> Result<Vec<GpModel>> {
    validate(x, outputs)?;
    let n = x.len();
    let d = x[0].len() as f64;
    let mut factors = Vec::new();
    let mut last_err = None;
    for &f in &config.lengthscale_factors {
        for &noise in &config.noise_levels {
            match factorize(x, f * d.sqrt(), noise) {
                Ok(fac) => factors.push(fac),
                Err(e) => last_err = Some(e),
            }
        }
    }
    if factors.is_empty() {
        return Err(last_err.unwrap_or(Error::Empty("GP hyperparameter grid")));
    }
    let inputs = Arc::new(x.to_vec());
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    outputs
        .iter()
        .map(|y| {
            let (mean, scale, ys) = standardize(y);
            let mut best: Option<(f64, &Factor, DVector<f64>)> = None;
            for fac in &factors {
                let alpha = fac.chol.solve(&ys);
                let lml = -0.5 * ys.dot(&alpha) - 0.5 * fac.log_det - n as f64 * half_log_2pi;
                // Strict `>` keeps the first cell on ties, so the choice is order-stable.
                if lml.is_finite() && best.as_ref().is_none_or(|b| lml > b.0) {
                    best = Some((lml, fac, alpha));
                }
            }
            let (lml, fac, alpha) = best.ok_or(Error::NonFinite("GP log marginal likelihood"))?;
            Ok(GpModel {
                inputs: Arc::clone(&inputs),
                weights: alpha.iter().copied().collect(),
                lengthscale: fac.lengthscale,
                noise: fac.noise,
                mean,
                scale,
                log_marginal: lml - n as f64 * scale.ln(),
            })
        })
        .collect()
}

impl GpModel {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        Self::fit_with(x, y, &GpConfig::default())
    }

    pub fn fit_with(x: &[Vec<f64>], y: &[f64], config: &GpConfig) -> Result<Self> {
        Ok(fit_many(x, &[y], config)?.remove(0))
    }

    /// Log marginal likelihood of every grid cell for `(x, y)`.
    pub fn grid_scores(x: &[Vec<f64>], y: &[f64], config: &GpConfig) -> Result<Vec<GridScore>> {
        validate(x, &[y])?;
        let d = x[0].len() as f64;
        let n = x.len() as f64;
        let (_, scale, ys) = standardize(y);
        let mut out = Vec::new();
        for &f in &config.lengthscale_factors {
            for &noise in &config.noise_levels {
                let fac = factorize(x, f * d.sqrt(), noise)?;
                let alpha = fac.chol.solve(&ys);
                out.push(GridScore {
                    lengthscale: fac.lengthscale,
                    noise: fac.noise,
                    log_marginal: -0.5 * ys.dot(&alpha)
                        - 0.5 * fac.log_det
                        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
                        - n * scale.ln(),
                });
            }
        }
        Ok(out)
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Noise variance in target units.
    pub fn noise_variance(&self) -> f64 {
        self.noise * self.scale * self.scale
    }

    pub fn signal_variance(&self) -> f64 {
        self.scale * self.scale
    }

    pub fn target_mean(&self) -> f64 {
        self.mean
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    /// `k(a, b)` in target units.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance() * se_kernel(a, b, self.lengthscale)
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .inputs
            .iter()
            .zip(&self.weights)
            .map(|(xi, w)| w * se_kernel(x, xi, self.lengthscale))
            .sum();
        self.mean + self.scale * s
    }

    pub fn predict_mean(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.predict_one(x)).collect()
    }
}

/// Predictions for one candidate: objectives and constraint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y: Vec<f64>,
    pub g: Vec<f64>,
}

/// Anything that can cheaply estimate objectives and constraints.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> Result<Prediction>;
}

/// GP surrogates for all objectives and constraints of a problem.
#[derive(Debug, Clone)]
pub struct SurrogateSet {
    objectives: Vec<GpModel>,
    constraints: Vec<GpModel>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SurrogateSet {
    /// Refit on the full archive; inputs are mapped to the unit box first.
    pub fn fit(problem: &ProblemSpec, archive: &[EvaluatedSolution], config: &GpConfig) -> Result<Self> {
        if archive.is_empty() {
            return Err(Error::Empty("archive for surrogate fitting"));
        }
        let x: Vec<Vec<f64>> = archive.iter().map(|s| problem.to_unit(&s.x)).collect();
        let cols = |pick: &dyn Fn(&EvaluatedSolution) -> &[f64], count: usize| -> Vec<Vec<f64>> {
            (0..count).map(|k| archive.iter().map(|s| pick(s)[k]).collect()).collect()
        };
        let ys = cols(&|s| &s.y, problem.n_obj());
        let gs = cols(&|s| &s.g, problem.n_con());
        let all: Vec<&[f64]> = ys.iter().chain(&gs).map(Vec::as_slice).collect();
        let mut models = fit_many(&x, &all, config)?;
        let constraints = models.split_off(problem.n_obj());
        Ok(Self {
            objectives: models,
            constraints,
            lower: problem.lower().to_vec(),
            upper: problem.upper().to_vec(),
        })
    }

    pub fn objective_models(&self) -> &[GpModel] {
        &self.objectives
    }

    pub fn constraint_models(&self) -> &[GpModel] {
        &self.constraints
    }

    /// Constraint level of the predicted constraint values at `x`.
    pub fn predicted_level(&self, handler: &ConstraintHandler, x: &[f64]) -> Result<f64> {
        handler.level(&self.predict(x)?.g)
    }
}

impl Predictor for SurrogateSet {
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.lower.len() {
            return Err(Error::Dimension {
                expected: self.lower.len(),
                got: x.len(),
                context: "surrogate query",
            });
        }
        let u: Vec<f64> = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| (v - l) / (h - l))
            .collect();
        Ok(Prediction {
            y: self.objectives.iter().map(|m| m.predict_one(&u)).collect(),
            g: self.constraints.iter().map(|m| m.predict_one(&u)).collect(),
        })
    }
}

/// Exact problem functions exposed as a predictor, for testing the inner loop.
#[derive(Debug, Clone)]
pub struct ExactPredictor<'a> {
    problem: &'a ProblemSpec,
}

impl<'a> ExactPredictor<'a> {
    pub fn new(problem: &'a ProblemSpec) -> Self {
        Self { problem }
    }
}

impl Predictor for ExactPredictor<'_> {
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let (y, g) = self.problem.evaluate(x)?;
        Ok(Prediction { y, g })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmcci::{CciParams, ConstraintMode, LevelGrid};

    fn line(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn interpolates_smooth_function() {
        let x = line(30);
        let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).sin()).collect();
        let m = GpModel::fit(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict_one(xi) - yi).abs() < 1e-3 * 2.0);
        }
        let scores = GpModel::grid_scores(&x, &y, &GpConfig::default()).unwrap();
        let worst = scores.iter().map(|s| s.log_marginal).fold(f64::INFINITY, f64::min);
        assert!(m.log_marginal_likelihood() > worst);
        let best = scores.iter().map(|s| s.log_marginal).fold(f64::NEG_INFINITY, f64::max);
        assert!((m.log_marginal_likelihood() - best).abs() < 1e-9 * best.abs().max(1.0));
    }

    #[test]
    fn constant_targets_and_duplicates() {
        let x = vec![vec![0.2, 0.2], vec![0.2, 0.2], vec![0.7, 0.1]];
        let m = GpModel::fit(&x, &[3.0, 3.0, 3.0]).unwrap();
        assert!((m.predict_one(&[0.9, 0.9]) - 3.0).abs() < 1e-12);
        let m = GpModel::fit(&x, &[1.0, 1.0, 2.0]).unwrap();
        assert!((m.predict_one(&[0.2, 0.2]) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn far_query_reverts_to_mean_and_kernel_diagonal() {
        let x = line(10);
        let y: Vec<f64> = x.iter().map(|v| v[0] * v[0]).collect();
        let m = GpModel::fit(&x, &y).unwrap();
        assert!((m.predict_one(&[1e3]) - m.target_mean()).abs() < 1e-3);
        assert!((m.kernel(&[0.3], &[0.3]) - m.signal_variance()).abs() < 1e-15);
    }

    #[test]
    fn predicted_level_is_on_grid() {
        let p = crate::problems::toy_b(2).unwrap();
        let xs = [[0.1, 0.5], [0.4, 0.9], [0.8, 0.2], [0.6, 0.6]];
        let archive: Vec<EvaluatedSolution> = xs
            .iter()
            .map(|x| {
                let (y, g) = p.evaluate(x).unwrap();
                EvaluatedSolution { x: x.to_vec(), y, g, level: 0.0, cycle: 0 }
            })
            .collect();
        let s = SurrogateSet::fit(&p, &archive, &GpConfig::default()).unwrap();
        let h = ConstraintHandler::new(ConstraintMode::MmCci, LevelGrid::default(), vec![CciParams::default()]);
        for sol in &archive {
            let lv = s.predicted_level(&h, &sol.x).unwrap();
            let exact = h.level(&sol.g).unwrap();
            assert_eq!(lv, exact);
        }
    }
}
