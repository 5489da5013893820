//! Constraint-calibrated levels.
//!
//! Each constraint value `g` is mapped to the largest `λ ∈ (0, 1]` such that
//! `λ^α · g <= C · (1 - λ)^β`. Feasible values (`g <= 0`) map to exactly 1 and
//! the level decreases, convexly, towards 0 as the violation grows. A solution's
//! region level is the minimum over its constraints, evaluated on a uniform
//! grid of step `1/K` by scanning downwards from 1.
//!
//! The per-constraint `(α, β, C)` are fitted from the violations observed in
//! the initial design by anchoring violation quantiles to target levels.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibration triple of one constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CciParams {
    alpha: f64,
    beta: f64,
    c: f64,
}

impl CciParams {
    pub fn new(alpha: f64, beta: f64, c: f64) -> Result<Self> {
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {alpha}")));
        }
        if !(beta >= 1.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be >= 1, got {beta}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be > 0, got {c}")));
        }
        Ok(Self { alpha, beta, c })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for CciParams {
    /// `(α, β, C) = (1, 2, 1)`.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            c: 1.0,
        }
    }
}

/// Uniform level grid `{1 - t/K : t = 0..=K}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGrid {
    k: usize,
}

impl Default for LevelGrid {
    fn default() -> Self {
        Self { k: 40 }
    }
}

impl LevelGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("grid partition count K must be positive".into()));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn step(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// The `t`-th value of the downward scan.
    pub fn level(&self, t: usize) -> f64 {
        1.0 - t as f64 / self.k as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.k).map(|t| self.level(t))
    }

    /// Whether `v` is (up to rounding) one of the grid values.
    pub fn contains(&self, v: f64) -> bool {
        let t = (1.0 - v) * self.k as f64;
        (0.0..=self.k as f64).contains(&t.round()) && (t - t.round()).abs() < 1e-9
    }
}

/// Quantile anchors used when fitting [`CciParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    quantiles: Vec<f64>,
    targets: Vec<f64>,
}

impl Default for AnchorSet {
    fn default() -> Self {
        Self {
            quantiles: vec![0.95, 0.75, 0.50, 0.25, 0.05],
            targets: vec![0.01, 0.125, 0.25, 0.375, 0.50],
        }
    }
}

impl AnchorSet {
    pub fn new(quantiles: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if quantiles.len() != targets.len() || quantiles.len() < 3 {
            return Err(Error::InvalidArgument(
                "anchor sets need equally many quantiles and targets (at least 3)".into(),
            ));
        }
        let in_unit = |v: &f64| *v > 0.0 && *v < 1.0;
        if !quantiles.iter().all(in_unit) || !targets.iter().all(in_unit) {
            return Err(Error::InvalidArgument("anchors must lie in (0, 1)".into()));
        }
        if !quantiles.windows(2).all(|w| w[0] > w[1]) || !targets.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::InvalidArgument(
                "quantiles must strictly decrease and targets strictly increase".into(),
            ));
        }
        Ok(Self { quantiles, targets })
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.quantiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantiles.is_empty()
    }
}

/// Whether `λ^α · g <= C · (1 - λ)^β`.
pub fn cci_holds(lambda: f64, g: f64, p: &CciParams) -> bool {
    lambda.powf(p.alpha) * g <= p.c * (1.0 - lambda).powf(p.beta)
}

/// Largest grid level satisfying the inequality for one constraint.
///
/// The scan ends at `λ = 0`, which always holds, so extreme violations map to 0.
pub fn max_cci_level(g: f64, p: &CciParams, grid: &LevelGrid) -> f64 {
    for t in 0..grid.k() {
        let lambda = grid.level(t);
        if cci_holds(lambda, g, p) {
            return lambda;
        }
    }
    0.0
}

/// Continuous level: 1 for `g <= 0`, else the root of `λ^α g = C (1-λ)^β`.
pub fn analytic_max_cci(g: f64, p: &CciParams) -> f64 {
    if g <= 0.0 {
        return 1.0;
    }
    // phi is strictly decreasing on (0, 1) with phi(0) = C > 0 > phi(1) = -g
    let phi = |l: f64| p.c * (1.0 - l).powf(p.beta) - l.powf(p.alpha) * g;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Region level: the first grid value, scanning down from 1, at which every
/// constraint satisfies its calibrated inequality. Unconstrained problems give 1.
pub fn mm_cci_level(g: &[f64], params: &[CciParams], grid: &LevelGrid) -> Result<f64> {
    if g.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: g.len(),
            context: "constraint vector vs calibration params",
        });
    }
    for t in 0..grid.k() {
        let lambda = grid.level(t);
        if g.iter().zip(params).all(|(&gj, p)| cci_holds(lambda, gj, p)) {
            return Ok(lambda);
        }
    }
    Ok(0.0)
}

/// Outcome of fitting one constraint's calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedCci {
    pub params: CciParams,
    /// No positive violation was observed; `params` is the default triple.
    pub never_violated: bool,
    /// Too few violations for the log-linear fit; `α = 1, β = 2` were fixed.
    pub fallback: bool,
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], r: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = r * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Fit `(α, β, C)` from raw violations `max(0, g)` of one constraint.
pub fn fit_cci_params(violations: &[f64], anchors: &AnchorSet) -> Result<FittedCci> {
    let mut positive: Vec<f64> = violations.iter().copied().filter(|&v| v > 0.0).collect();
    if positive.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("constraint violations"));
    }
    if positive.is_empty() {
        return Ok(FittedCci {
            params: CciParams::default(),
            never_violated: true,
            fallback: false,
        });
    }
    positive.sort_by(f64::total_cmp);
    if positive.len() < anchors.len() {
        // single anchor at (r, λ) = (0.5, 0.5): C = v · λ^α / (1 - λ)^β
        let (alpha, beta, lambda) = (1.0, 2.0, 0.5_f64);
        let v = quantile_sorted(&positive, 0.5);
        let c = v * lambda.powf(alpha) / (1.0 - lambda).powf(beta);
        return Ok(FittedCci {
            params: CciParams::new(alpha, beta, c)?,
            never_violated: false,
            fallback: true,
        });
    }
    let values: Vec<f64> = anchors
        .quantiles()
        .iter()
        .map(|&r| quantile_sorted(&positive, r))
        .collect();
    Ok(FittedCci {
        params: fit_anchor_values(&values, anchors)?,
        never_violated: false,
        fallback: false,
    })
}

/// Least-squares solve of `log v_r = log C + β log(1-λ_r) - α log λ_r`
/// restricted to `α >= 1, β >= 1`.
///
/// When the unconstrained optimum leaves the admissible region, the violated
/// bounds are made active and the remaining unknowns are refitted; the
/// admissible candidate with the smallest residual wins.
pub fn fit_anchor_values(values: &[f64], anchors: &AnchorSet) -> Result<CciParams> {
    if values.len() != anchors.len() {
        return Err(Error::Dimension {
            expected: anchors.len(),
            got: values.len(),
            context: "anchor values",
        });
    }
    if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("anchor values must be positive and finite".into()));
    }
    let n = values.len();
    let rhs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let beta_col: Vec<f64> = anchors.targets().iter().map(|l| (1.0 - l).ln()).collect();
    let alpha_col: Vec<f64> = anchors.targets().iter().map(|l| -l.ln()).collect();

    // (fix_beta, fix_alpha) patterns; fixed coefficients are pinned to 1
    let patterns = [(false, false), (false, true), (true, false), (true, true)];
    let mut best: Option<(f64, [f64; 3])> = None;
    for (fix_beta, fix_alpha) in patterns {
        let mut cols: Vec<&[f64]> = Vec::with_capacity(3);
        let ones = vec![1.0; n];
        cols.push(&ones);
        if !fix_beta {
            cols.push(&beta_col);
        }
        if !fix_alpha {
            cols.push(&alpha_col);
        }
        let b = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                rhs[i]
                    - if fix_beta { beta_col[i] } else { 0.0 }
                    - if fix_alpha { alpha_col[i] } else { 0.0 }
            }),
        );
        let a = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let sol = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("anchor least squares failed: {e}")))?;
        let mut it = sol.iter().copied();
        let log_c = it.next().unwrap_or(0.0);
        let beta = if fix_beta { 1.0 } else { it.next().unwrap_or(1.0) };
        let alpha = if fix_alpha { 1.0 } else { it.next().unwrap_or(1.0) };
        if alpha < 1.0 - 1e-12 || beta < 1.0 - 1e-12 {
            continue;
        }
        let resid: f64 = (0..n)
            .map(|i| {
                let pred = log_c + beta * beta_col[i] + alpha * alpha_col[i];
                (pred - rhs[i]).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|(r, _)| resid < *r) {
            best = Some((resid, [alpha.max(1.0), beta.max(1.0), log_c.exp()]));
        }
        if !fix_alpha && !fix_beta {
            // the unconstrained optimum is admissible and cannot be beaten
            break;
        }
    }
    let [alpha, beta, c] = best.map(|(_, p)| p).unwrap_or([1.0, 1.0, 1.0]);
    CciParams::new(alpha, beta, c)
}

/// Fit every constraint from the constraint matrix of the initial design.
pub fn fit_all(constraints: &[Vec<f64>], n_con: usize, anchors: &AnchorSet) -> Result<Vec<FittedCci>> {
    (0..n_con)
        .map(|j| {
            let v: Vec<f64> = constraints.iter().map(|g| g[j].max(0.0)).collect();
            fit_cci_params(&v, anchors)
        })
        .collect()
}

/// How constraint values are turned into a selection priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Worst-constraint calibrated level.
    #[serde(rename = "mmcci")]
    MmCci,
    /// Arithmetic mean of per-constraint calibrated levels.
    MeanMaxcci,
    /// `min_j (1 - tanh(max(0, g_j)))`.
    Tanh,
    /// Feasibility first, then smaller total violation.
    Cv,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [
        ConstraintMode::MmCci,
        ConstraintMode::MeanMaxcci,
        ConstraintMode::Tanh,
        ConstraintMode::Cv,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintMode::MmCci => "mmcci",
            ConstraintMode::MeanMaxcci => "mean_maxcci",
            ConstraintMode::Tanh => "tanh",
            ConstraintMode::Cv => "cv",
        }
    }

    /// Whether the mode needs fitted calibration params.
    pub fn uses_cci(&self) -> bool {
        matches!(self, ConstraintMode::MmCci | ConstraintMode::MeanMaxcci)
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConstraintMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown constraint mode `{s}`")))
    }
}

/// Level under one of the ablation mappings.
///
/// For [`ConstraintMode::Cv`] the result is a priority key only: 1 when
/// feasible, otherwise the negated total violation.
pub fn baseline_level(
    g: &[f64],
    mode: ConstraintMode,
    params: &[CciParams],
    grid: &LevelGrid,
) -> Result<f64> {
    match mode {
        ConstraintMode::MmCci => mm_cci_level(g, params, grid),
        ConstraintMode::MeanMaxcci => {
            if g.len() != params.len() {
                return Err(Error::Dimension {
                    expected: params.len(),
                    got: g.len(),
                    context: "constraint vector vs calibration params",
                });
            }
            if g.is_empty() {
                return Ok(1.0);
            }
            let sum: f64 = g.iter().zip(params).map(|(&gj, p)| max_cci_level(gj, p, grid)).sum();
            Ok(sum / g.len() as f64)
        }
        ConstraintMode::Tanh => Ok(g
            .iter()
            .map(|&gj| 1.0 - gj.max(0.0).tanh())
            .fold(1.0, f64::min)),
        ConstraintMode::Cv => {
            let total: f64 = g.iter().map(|&gj| gj.max(0.0)).sum();
            Ok(if total == 0.0 { 1.0 } else { -total })
        }
    }
}

/// Constraint mapping bound to its parameters, shared by real evaluations and
/// surrogate predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintHandler {
    pub mode: ConstraintMode,
    pub grid: LevelGrid,
    pub params: Vec<CciParams>,
}

impl ConstraintHandler {
    pub fn new(mode: ConstraintMode, grid: LevelGrid, params: Vec<CciParams>) -> Self {
        Self { mode, grid, params }
    }

    /// Priority of a constraint vector; higher is better, 1 means feasible.
    pub fn level(&self, g: &[f64]) -> Result<f64> {
        baseline_level(g, self.mode, &self.params, &self.grid)
    }

    /// Level as stored in the archive and fed to the state encoder.
    ///
    /// The CV key is unbounded, so CV runs store the feasibility indicator.
    pub fn archive_level(&self, g: &[f64]) -> Result<f64> {
        match self.mode {
            ConstraintMode::Cv => Ok(if g.iter().all(|&v| v <= 0.0) { 1.0 } else { 0.0 }),
            _ => self.level(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: f64, b: f64, c: f64) -> CciParams {
        CciParams::new(a, b, c).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(CciParams::new(0.5, 2.0, 1.0).is_err());
        assert!(CciParams::new(1.0, 0.9, 1.0).is_err());
        assert!(CciParams::new(1.0, 2.0, 0.0).is_err());
        assert!(LevelGrid::new(0).is_err());
    }

    #[test]
    fn cci_holds_examples() {
        let any = p(2.5, 3.0, 0.7);
        assert!(cci_holds(1.0, -0.3, &any));
        assert!(!cci_holds(1.0, 0.1, &any));
        let q = p(1.0, 2.0, 1.0);
        assert!(cci_holds(0.375, 1.0, &q));
        assert!(!cci_holds(0.4, 1.0, &q));
    }

    #[test]
    fn grid_levels() {
        let grid = LevelGrid::default();
        let q = p(1.0, 2.0, 1.0);
        assert_eq!(max_cci_level(-5.0, &q, &grid), 1.0);
        assert_eq!(max_cci_level(1.0, &q, &grid), 0.375);
        assert!(!cci_holds(1.0 / 40.0, 1e9, &q));
        assert_eq!(max_cci_level(1e9, &q, &grid), 0.0);
        assert!(grid.contains(0.375) && grid.contains(0.0) && grid.contains(1.0));
        assert!(!grid.contains(0.38));
    }

    #[test]
    fn analytic_levels() {
        assert_eq!(analytic_max_cci(0.0, &p(1.0, 2.0, 1.0)), 1.0);
        let golden = (3.0 - 5f64.sqrt()) / 2.0;
        assert!((analytic_max_cci(1.0, &p(1.0, 2.0, 1.0)) - golden).abs() < 1e-12);
        assert!((analytic_max_cci(1.0, &p(1.0, 1.0, 1.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn worst_constraint_aggregation() {
        let grid = LevelGrid::default();
        let q = p(1.0, 2.0, 1.0);
        assert_eq!(mm_cci_level(&[-1.0, 1.0], &[q, q], &grid).unwrap(), 0.375);
        assert_eq!(mm_cci_level(&[-1.0, -2.0], &[q, q], &grid).unwrap(), 1.0);
        assert_eq!(mm_cci_level(&[], &[], &grid).unwrap(), 1.0);
        assert!(mm_cci_level(&[1.0], &[], &grid).is_err());
    }

    #[test]
    fn fit_recovers_exact_anchors() {
        let anchors = AnchorSet::default();
        let truth = p(1.0, 2.0, 1.0);
        let values: Vec<f64> = anchors
            .targets()
            .iter()
            .map(|&l| truth.c() * (1.0 - l).powf(truth.beta()) / l.powf(truth.alpha()))
            .collect();
        let fit = fit_anchor_values(&values, &anchors).unwrap();
        assert!((fit.alpha() - 1.0).abs() < 1e-6);
        assert!((fit.beta() - 2.0).abs() < 1e-6);
        assert!((fit.c() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fit_fallback_and_default() {
        let anchors = AnchorSet::default();
        let f = fit_cci_params(&[0.0, 0.4, -1.0, 0.6], &anchors).unwrap();
        assert!(f.fallback && !f.never_violated);
        assert_eq!((f.params.alpha(), f.params.beta()), (1.0, 2.0));
        assert!((f.params.c() - 1.0).abs() < 1e-12);
        let f = fit_cci_params(&[0.0, 0.0], &anchors).unwrap();
        assert!(f.never_violated);
        assert_eq!(f.params, CciParams::default());
    }

    #[test]
    fn fit_projects_onto_admissible_region() {
        // log v grows with log λ: unconstrained alpha would be negative
        let anchors = AnchorSet::default();
        let values = [0.1, 0.2, 0.3, 0.4, 0.5];
        let fit = fit_anchor_values(&values, &anchors).unwrap();
        assert!(fit.alpha() >= 1.0 && fit.beta() >= 1.0 && fit.c() > 0.0);
    }

    #[test]
    fn ablation_mappings() {
        let grid = LevelGrid::default();
        let q = p(1.0, 2.0, 1.0);
        assert_eq!(baseline_level(&[-1.0, 0.0], ConstraintMode::Tanh, &[], &grid).unwrap(), 1.0);
        let t = baseline_level(&[1.0], ConstraintMode::Tanh, &[], &grid).unwrap();
        assert!((t - 0.238_405_844_044_234).abs() < 1e-12);
        // per-constraint levels 1.0 and 0.375
        let m = baseline_level(&[-1.0, 1.0], ConstraintMode::MeanMaxcci, &[q, q], &grid).unwrap();
        assert!((m - 0.6875).abs() < 1e-15);
        assert_eq!(baseline_level(&[-1.0, -0.5], ConstraintMode::Cv, &[], &grid).unwrap(), 1.0);
        assert_eq!(baseline_level(&[0.5, 0.25], ConstraintMode::Cv, &[], &grid).unwrap(), -0.75);
        assert!("bogus".parse::<ConstraintMode>().is_err());
        for m in ConstraintMode::ALL {
            assert_eq!(m.as_str().parse::<ConstraintMode>().unwrap(), m);
        }
    }

    #[test]
    fn mean_of_levels_example() {
        // levels 0.8 and 0.5 from two calibrations at K = 40
        let grid = LevelGrid::default();
        let a = p(1.0, 1.0, 1.0);
        // analytic level 1/(1+g): 0.806 -> 0.8 and exactly 0.5 on the grid
        assert_eq!(max_cci_level(0.24, &a, &grid), 0.8);
        assert_eq!(max_cci_level(1.0, &a, &grid), 0.5);
        let m = baseline_level(&[0.24, 1.0], ConstraintMode::MeanMaxcci, &[a, a], &grid).unwrap();
        assert!((m - 0.65).abs() < 1e-12);
        let w = mm_cci_level(&[0.24, 1.0], &[a, a], &grid).unwrap();
        assert_eq!(w, 0.5);
    }
}
