//! Problem definitions, Latin hypercube designs, built-in test problems and the
//! name-addressed problem registry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Maps a decision vector to a vector of reals.
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// An expensive constrained multi-objective problem over a box.
///
/// Objectives are minimized and a constraint value `g_j <= 0` means satisfied.
#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_obj: usize,
    n_con: usize,
    objective_fn: VectorFn,
    constraint_fn: VectorFn,
    reference_front: Option<Vec<Vec<f64>>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("n_obj", &self.n_obj)
            .field("n_con", &self.n_con)
            .field("has_front", &self.reference_front.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        n_obj: usize,
        n_con: usize,
        objective_fn: VectorFn,
        constraint_fn: VectorFn,
    ) -> Result<Self> {
        let name = name.into();
        if lower.is_empty() {
            return Err(Error::InvalidArgument("problem dimension must be positive".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
                context: "upper bounds",
            });
        }
        if n_obj < 2 {
            return Err(Error::InvalidArgument(format!(
                "problem `{name}` needs at least two objectives, got {n_obj}"
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "bounds of dimension {i} are not ordered: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self {
            name,
            lower,
            upper,
            n_obj,
            n_con,
            objective_fn,
            constraint_fn,
            reference_front: None,
        })
    }

    /// Attach a reference front; points must be `n_obj`-dimensional.
    pub fn with_reference_front(mut self, front: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(p) = front.iter().find(|p| p.len() != self.n_obj) {
            return Err(Error::Dimension {
                expected: self.n_obj,
                got: p.len(),
                context: "reference front point",
            });
        }
        self.reference_front = Some(front);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_obj(&self) -> usize {
        self.n_obj
    }

    pub fn n_con(&self) -> usize {
        self.n_con
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Evaluate objectives and constraints at an in-bounds point.
    pub fn evaluate(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
                context: "decision vector",
            });
        }
        for (i, &v) in x.iter().enumerate() {
            if !(v >= self.lower[i] && v <= self.upper[i]) {
                return Err(Error::OutOfBounds {
                    index: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        let y = (self.objective_fn)(x);
        let g = (self.constraint_fn)(x);
        if y.len() != self.n_obj {
            return Err(Error::Dimension {
                expected: self.n_obj,
                got: y.len(),
                context: "objective output",
            });
        }
        if g.len() != self.n_con {
            return Err(Error::Dimension {
                expected: self.n_con,
                got: g.len(),
                context: "constraint output",
            });
        }
        if y.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("problem evaluation"));
        }
        Ok((y, g))
    }

    /// Componentwise clip into the box.
    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }

    pub fn clip_in_place(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Map into the unit box.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Inverse of [`ProblemSpec::to_unit`].
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| lo + v * (hi - lo))
            .collect()
    }

    pub fn has_reference_front(&self) -> bool {
        self.reference_front.is_some()
    }

    /// The known constrained Pareto front used for IGD.
    pub fn reference_front(&self) -> Result<&[Vec<f64>]> {
        self.reference_front
            .as_deref()
            .ok_or_else(|| Error::NoReferenceFront(self.name.clone()))
    }
}

/// An expensively evaluated solution together with its constraint level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub g: Vec<f64>,
    pub level: f64,
    /// Cycle that produced the solution; 0 for the initial design.
    pub cycle: usize,
}

impl EvaluatedSolution {
    /// True constraint satisfaction, independent of any level mapping.
    pub fn is_feasible(&self) -> bool {
        self.g.iter().all(|&v| v <= 0.0)
    }

    pub fn total_violation(&self) -> f64 {
        self.g.iter().map(|&v| v.max(0.0)).sum()
    }
}

/// Per-cycle bookkeeping of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub action: Option<usize>,
    pub reward: f64,
    pub igd: Option<f64>,
    pub max_level: f64,
    pub feasible_count: usize,
    /// Set when infill had to perturb candidates to avoid duplicates.
    pub perturbed_fallback: bool,
}

/// Append-only log of expensive evaluations for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub solutions: Vec<EvaluatedSolution>,
    pub cycle_log: Vec<CycleRecord>,
    /// Maximum number of solutions; `None` when the budget may be exceeded.
    pub capacity: Option<usize>,
}

impl RunArchive {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            solutions: Vec::new(),
            cycle_log: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn push(&mut self, s: EvaluatedSolution) -> Result<()> {
        if let Some(cap) = self.capacity {
            if self.solutions.len() >= cap {
                return Err(Error::InvalidArgument(format!(
                    "archive is full ({cap} evaluations)"
                )));
            }
        }
        self.solutions.push(s);
        Ok(())
    }

    pub fn max_level(&self) -> f64 {
        self.solutions
            .iter()
            .map(|s| s.level)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn feasible_count(&self) -> usize {
        self.solutions.iter().filter(|s| s.is_feasible()).count()
    }

    /// 1-based index of the first truly feasible evaluation.
    pub fn evaluations_to_feasible(&self) -> Option<usize> {
        self.solutions.iter().position(|s| s.is_feasible()).map(|i| i + 1)
    }

    pub fn objectives(&self) -> Vec<Vec<f64>> {
        self.solutions.iter().map(|s| s.y.clone()).collect()
    }

    pub fn levels(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.level).collect()
    }
}

/// Latin hypercube design of `n` points inside the problem box.
///
/// Every dimension is split into `n` equal strata, each hit by exactly one point
/// drawn uniformly inside its stratum.
pub fn lhs_sample(n: usize, problem: &ProblemSpec, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng::stream(seed, Stream::Lhs, 0);
    lhs_with_rng(n, problem.lower(), problem.upper(), &mut rng)
}

pub(crate) fn lhs_with_rng(
    n: usize,
    lower: &[f64],
    upper: &[f64],
    rng: &mut rng::Rng,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("LHS needs at least one point".into()));
    }
    let d = lower.len();
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(rng);
        let width = (upper[j] - lower[j]) / n as f64;
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let v = lower[j] + (strata[i] as f64 + u) * width;
            // u < 1 but rounding can land exactly on the next stratum edge
            p[j] = v.min(lower[j] + (strata[i] + 1) as f64 * width).min(upper[j]);
        }
    }
    Ok(points)
}

/// `n` evenly spaced points on the segment `{(a, 1-a) : a in [a_lo, a_hi]}`.
pub fn linear_front(a_lo: f64, a_hi: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let a = a_lo + (a_hi - a_lo) * i as f64 / (n - 1) as f64;
            vec![a, 1.0 - a]
        })
        .collect()
}

/// Reference points used for the built-in fronts.
pub const BUILTIN_FRONT_POINTS: usize = 100;

/// TOY-A: `f = (x1, 1 - x1)`, `g1 = 0.2 - x2`; the constraint is inactive on the front.
pub fn toy_a(dim: usize) -> Result<ProblemSpec> {
    if dim < 2 {
        return Err(Error::InvalidArgument("TOY-A needs dim >= 2".into()));
    }
    ProblemSpec::new(
        "toy-a",
        vec![0.0; dim],
        vec![1.0; dim],
        2,
        1,
        Arc::new(|x: &[f64]| vec![x[0], 1.0 - x[0]]),
        Arc::new(|x: &[f64]| vec![0.2 - x[1]]),
    )?
    .with_reference_front(linear_front(0.0, 1.0, BUILTIN_FRONT_POINTS))
}

/// TOY-B: TOY-A objectives with `g1 = x1 - threshold`, which truncates the front.
pub fn toy_b_with_threshold(dim: usize, threshold: f64) -> Result<ProblemSpec> {
    if dim < 2 {
        return Err(Error::InvalidArgument("TOY-B needs dim >= 2".into()));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "TOY-B threshold {threshold} must lie in [0, 1)"
        )));
    }
    let name = if threshold == 0.5 {
        "toy-b".to_string()
    } else {
        format!("toy-b@{threshold}")
    };
    ProblemSpec::new(
        name,
        vec![0.0; dim],
        vec![1.0; dim],
        2,
        1,
        Arc::new(|x: &[f64]| vec![x[0], 1.0 - x[0]]),
        Arc::new(move |x: &[f64]| vec![x[0] - threshold]),
    )?
    .with_reference_front(linear_front(0.0, threshold, BUILTIN_FRONT_POINTS))
}

pub fn toy_b(dim: usize) -> Result<ProblemSpec> {
    toy_b_with_threshold(dim, 0.5)
}

/// Builds a problem for a requested dimension (`None` = problem default).
pub type ProblemFactory = Arc<dyn Fn(Option<usize>) -> Result<ProblemSpec> + Send + Sync>;

/// Default decision dimension of the built-in problems.
pub const DEFAULT_TOY_DIM: usize = 3;

/// Name-addressed problem registry.
///
/// Names may carry a dimension suffix, e.g. `toy-a:8`.
#[derive(Clone)]
pub struct ProblemRegistry {
    factories: BTreeMap<String, ProblemFactory>,
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(
            "toy-a",
            Arc::new(|d| toy_a(d.unwrap_or(DEFAULT_TOY_DIM))),
        );
        r.register(
            "toy-b",
            Arc::new(|d| toy_b(d.unwrap_or(DEFAULT_TOY_DIM))),
        );
        r.register(
            "toy-b-tight",
            Arc::new(|d| toy_b_with_threshold(d.unwrap_or(DEFAULT_TOY_DIM), 0.05)),
        );
        r
    }

    /// Register (or replace) a problem factory, e.g. a suite problem
    /// implemented from its published definition.
    pub fn register(&mut self, name: impl Into<String>, factory: ProblemFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn get(&self, spec: &str) -> Result<ProblemSpec> {
        let (name, dim) = match spec.split_once(':') {
            Some((n, d)) => {
                let d: usize = d.parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad dimension suffix in `{spec}`"))
                })?;
                (n, Some(d))
            }
            None => (spec, None),
        };
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownProblem(name.to_string()))?;
        factory(dim)
    }
}

/// Read a front file with header `f1,...,fM` and one point per row.
pub fn load_front_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let m = reader.headers()?.len();
    let mut front = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: record.len(),
                context: "front csv row",
            });
        }
        let point = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("front csv value `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        front.push(point);
    }
    if front.is_empty() {
        return Err(Error::Empty("front csv"));
    }
    Ok(front)
}

pub fn write_front_csv(path: &Path, front: &[Vec<f64>]) -> Result<()> {
    let m = front.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=m).map(|i| format!("f{i}")))?;
    for p in front {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dominates(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
    }

    #[test]
    fn toy_a_evaluations() {
        let p = toy_a(3).unwrap();
        let (y, g) = p.evaluate(&[0.4, 0.1, 0.5]).unwrap();
        assert_eq!(y, vec![0.4, 0.6]);
        assert!((g[0] - 0.1).abs() < 1e-15);
        let (y, g) = p.evaluate(&[0.7, 0.9, 0.0]).unwrap();
        assert!((y[0] - 0.7).abs() < 1e-15 && (y[1] - 0.3).abs() < 1e-15);
        assert!((g[0] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn toy_b_boundary() {
        let p = toy_b(3).unwrap();
        let (y, g) = p.evaluate(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let p = toy_a(2).unwrap();
        assert!(matches!(
            p.evaluate(&[1.2, 0.5]),
            Err(Error::OutOfBounds { index: 0, .. })
        ));
        assert!(matches!(p.evaluate(&[0.2]), Err(Error::Dimension { .. })));
        assert_eq!(p.clip(&[1.2, -0.1]), vec![1.0, 0.0]);
    }

    #[test]
    fn lhs_four_strata() {
        let p = ProblemSpec::new(
            "line",
            vec![0.0],
            vec![1.0],
            2,
            0,
            Arc::new(|x: &[f64]| vec![x[0], -x[0]]),
            Arc::new(|_: &[f64]| vec![]),
        )
        .unwrap();
        let pts = lhs_sample(4, &p, 3).unwrap();
        let mut bins: Vec<usize> = pts.iter().map(|x| ((x[0] * 4.0).floor() as usize).min(3)).collect();
        bins.sort_unstable();
        assert_eq!(bins, vec![0, 1, 2, 3]);
    }

    #[test]
    fn lhs_hundred_by_eight() {
        let p = toy_a(8).unwrap();
        let pts = lhs_sample(100, &p, 11).unwrap();
        for j in 0..8 {
            let mut hist = [0usize; 100];
            for x in &pts {
                hist[((x[j] * 100.0).floor() as usize).min(99)] += 1;
            }
            assert!(hist.iter().all(|&c| c == 1), "dimension {j}");
        }
        assert_eq!(pts, lhs_sample(100, &p, 11).unwrap());
        assert_ne!(pts, lhs_sample(100, &p, 12).unwrap());
        assert!(lhs_sample(0, &p, 1).is_err());
    }

    #[test]
    fn builtin_fronts() {
        let a = toy_a(3).unwrap();
        let fa = a.reference_front().unwrap();
        assert_eq!(fa.len(), 100);
        assert_eq!(fa[0], vec![0.0, 1.0]);
        assert_eq!(fa[99], vec![1.0, 0.0]);
        let b = toy_b(3).unwrap();
        let fb = b.reference_front().unwrap();
        assert_eq!(fb.len(), 100);
        assert!(fb.iter().all(|p| p[0] <= 0.5 + 1e-15 && (p[0] + p[1] - 1.0).abs() < 1e-12));
        assert!((fb[99][0] - 0.5).abs() < 1e-15);
        for f in [fa, fb] {
            for (i, p) in f.iter().enumerate() {
                for (j, q) in f.iter().enumerate() {
                    assert!(i == j || !dominates(p, q));
                }
            }
        }
    }

    #[test]
    fn missing_front_is_an_error() {
        let p = ProblemSpec::new(
            "bare",
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            2,
            0,
            Arc::new(|x: &[f64]| vec![x[0], x[1]]),
            Arc::new(|_: &[f64]| vec![]),
        )
        .unwrap();
        assert!(matches!(p.reference_front(), Err(Error::NoReferenceFront(_))));
    }

    #[test]
    fn registry_lookup() {
        let r = ProblemRegistry::with_builtins();
        assert_eq!(r.get("toy-a").unwrap().dim(), DEFAULT_TOY_DIM);
        assert_eq!(r.get("toy-b:8").unwrap().dim(), 8);
        let tight = r.get("toy-b-tight").unwrap();
        let (_, g) = tight.evaluate(&[0.04, 0.5, 0.5]).unwrap();
        assert!(g[0] < 0.0);
        assert!(matches!(r.get("mw1"), Err(Error::UnknownProblem(_))));
        assert!(r.get("toy-a:x").is_err());
    }

    #[test]
    fn front_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("front.csv");
        let front = linear_front(0.0, 1.0, 7);
        write_front_csv(&path, &front).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f1,f2\n"));
        assert_eq!(load_front_csv(&path).unwrap(), front);
    }
}
