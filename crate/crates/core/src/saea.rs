//! NSGA-II on surrogate predictions with level-first environmental selection,
//! plus the elite-batch infill rule.

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmcci::ConstraintHandler;
use crate::problems::ProblemSpec;
use crate::rng::Rng;
use crate::surrogate::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub eta_c: f64,
    pub crossover_prob: f64,
    pub eta_m: f64,
    /// Per-variable mutation probability; `None` means `1/d`.
    pub mutation_prob: Option<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            pop_size: 50,
            generations: 15,
            eta_c: 15.0,
            crossover_prob: 0.9,
            eta_m: 20.0,
            mutation_prob: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::Config(format!("population size {} is below 2", self.pop_size)));
        }
        let probs = [Some(self.crossover_prob), self.mutation_prob];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("variation probabilities must lie in [0, 1]".into()));
        }
        if !(self.eta_c >= 0.0 && self.eta_m >= 0.0) {
            return Err(Error::Config("distribution indices must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn mutation_prob_for(&self, dim: usize) -> f64 {
        self.mutation_prob.unwrap_or(1.0 / dim as f64)
    }
}

/// A candidate scored by the surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub x: Vec<f64>,
    pub pred_y: Vec<f64>,
    pub pred_level: f64,
    pub rank: usize,
    pub crowding: f64,
}

/// Pareto dominance for minimization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Nondominated fronts as index lists, best first; indices ascend within a front.
pub fn fast_nondominated_sort(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&points[i], &points[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each point of one front.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = front[0].len();
    let mut dist = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| front[a][k].total_cmp(&front[b][k]).then(a.cmp(&b)));
        let lo = front[order[0]][k];
        let hi = front[order[n - 1]][k];
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (front[order[w + 1]][k] - front[order[w - 1]][k]) / range;
            }
        }
    }
    dist
}

/// `Less` means `a` is preferred: higher level, then lower rank, then larger
/// crowding, then smaller index.
pub fn level_first_compare(a: &Individual, ia: usize, b: &Individual, ib: usize) -> Ordering {
    b.pred_level
        .total_cmp(&a.pred_level)
        .then(a.rank.cmp(&b.rank))
        .then(b.crowding.total_cmp(&a.crowding))
        .then(ia.cmp(&ib))
}

/// Assign ranks and crowding distances within each level stratum.
pub fn assign_rank_and_crowding(pop: &mut [Individual]) {
    let mut levels: Vec<f64> = pop.iter().map(|p| p.pred_level).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    for level in levels {
        let members: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].pred_level == level).collect();
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| pop[i].pred_y.clone()).collect();
        for (r, front) in fast_nondominated_sort(&pts).into_iter().enumerate() {
            let fpts: Vec<Vec<f64>> = front.iter().map(|&i| pts[i].clone()).collect();
            let cd = crowding_distance(&fpts);
            for (&local, d) in front.iter().zip(cd) {
                let ind = &mut pop[members[local]];
                ind.rank = r;
                ind.crowding = d;
            }
        }
    }
}

/// Indices of `pop` in level-first order.
pub fn level_first_order(pop: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| level_first_compare(&pop[a], a, &pop[b], b));
    idx
}

/// Bounded simulated binary crossover of two parents.
pub fn sbx_crossover(
    p1: &[f64],
    p2: &[f64],
    lower: &[f64],
    upper: &[f64],
    eta: f64,
    rng: &mut Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for i in 0..p1.len() {
        if rng.random::<f64>() > 0.5 || (p1[i] - p2[i]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[i] < p2[i] { (p1[i], p2[i]) } else { (p2[i], p1[i]) };
        let (lb, ub) = (lower[i], upper[i]);
        let u: f64 = rng.random();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let bq1 = spread(1.0 + 2.0 * (y1 - lb) / (y2 - y1));
        let bq2 = spread(1.0 + 2.0 * (ub - y2) / (y2 - y1));
        let mut a = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(lb, ub);
        let mut b = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(lb, ub);
        if rng.random::<f64>() < 0.5 {
            std::mem::swap(&mut a, &mut b);
        }
        c1[i] = a;
        c2[i] = b;
    }
    (c1, c2)
}

/// Bounded polynomial mutation applied per variable with probability `prob`.
pub fn polynomial_mutation(x: &mut [f64], lower: &[f64], upper: &[f64], eta: f64, prob: f64, rng: &mut Rng) {
    for i in 0..x.len() {
        if rng.random::<f64>() >= prob {
            continue;
        }
        let (lb, ub) = (lower[i], upper[i]);
        let span = ub - lb;
        let y = x[i];
        let d1 = (y - lb) / span;
        let d2 = (ub - y) / span;
        let u: f64 = rng.random();
        let pow = 1.0 / (eta + 1.0);
        let dq = if u < 0.5 {
            let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            v.powf(pow) - 1.0
        } else {
            let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - v.powf(pow)
        };
        x[i] = (y + dq * span).clamp(lb, ub);
    }
}

/// Score decision vectors with the predictor and constraint mapping.
pub fn evaluate_population(
    xs: Vec<Vec<f64>>,
    predictor: &dyn Predictor,
    handler: &ConstraintHandler,
) -> Result<Vec<Individual>> {
    xs.into_iter()
        .map(|x| {
            let p = predictor.predict(&x)?;
            let level = handler.level(&p.g)?;
            Ok(Individual {
                x,
                pred_y: p.y,
                pred_level: level,
                rank: 0,
                crowding: 0.0,
            })
        })
        .collect()
}

fn tournament<'a>(pop: &'a [Individual], rng: &mut Rng) -> &'a Individual {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    if level_first_compare(&pop[a], a, &pop[b], b) == Ordering::Greater {
        &pop[b]
    } else {
        &pop[a]
    }
}

/// Evolve `initial` for the configured generations on surrogate predictions.
///
/// Offspring identical to a parent or an earlier offspring are dropped, so
/// without variation the population is carried over unchanged.
pub fn run_inner(
    initial: Vec<Vec<f64>>,
    problem: &ProblemSpec,
    predictor: &dyn Predictor,
    handler: &ConstraintHandler,
    config: &GenConfig,
    rng: &mut Rng,
) -> Result<Vec<Individual>> {
    config.validate()?;
    if initial.is_empty() {
        return Err(Error::Empty("initial population"));
    }
    let (lower, upper) = (problem.lower(), problem.upper());
    let initial: Vec<Vec<f64>> = initial.iter().map(|x| problem.clip(x)).collect();
    let size = initial.len();
    let mut pop = evaluate_population(initial, predictor, handler)?;
    assign_rank_and_crowding(&mut pop);
    let pm = config.mutation_prob_for(problem.dim());
    for _ in 0..config.generations {
        let mut children: Vec<Vec<f64>> = Vec::with_capacity(size);
        while children.len() < size {
            let p1 = tournament(&pop, rng);
            let p2 = tournament(&pop, rng);
            let (mut c1, mut c2) = if rng.random::<f64>() < config.crossover_prob {
                sbx_crossover(&p1.x, &p2.x, lower, upper, config.eta_c, rng)
            } else {
                (p1.x.clone(), p2.x.clone())
            };
            polynomial_mutation(&mut c1, lower, upper, config.eta_m, pm, rng);
            polynomial_mutation(&mut c2, lower, upper, config.eta_m, pm, rng);
            children.push(c1);
            if children.len() < size {
                children.push(c2);
            }
        }
        let mut fresh: Vec<Vec<f64>> = Vec::with_capacity(size);
        for c in children {
            if !pop.iter().any(|p| p.x == c) && !fresh.contains(&c) {
                fresh.push(c);
            }
        }
        let mut combined = pop;
        combined.extend(evaluate_population(fresh, predictor, handler)?);
        assign_rank_and_crowding(&mut combined);
        let order = level_first_order(&combined);
        let keep: Vec<bool> = {
            let mut k = vec![false; combined.len()];
            for &i in order.iter().take(size) {
                k[i] = true;
            }
            k
        };
        pop = combined
            .into_iter()
            .zip(keep)
            .filter_map(|(ind, k)| k.then_some(ind))
            .collect();
        assign_rank_and_crowding(&mut pop);
    }
    Ok(pop)
}

/// Decision vectors chosen for expensive evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteBatch {
    pub xs: Vec<Vec<f64>>,
    /// Set when perturbed copies were needed to avoid duplicates.
    pub perturbed: bool,
}

/// Normalized-space distance under which two points count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

fn is_duplicate(u: &[f64], others: &[Vec<f64>]) -> bool {
    others.iter().any(|o| {
        o.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < DUPLICATE_TOL
    })
}

/// Pick up to `batch` candidates: nondominated members of the best predicted
/// level ranked by crowding, then level-first order, then perturbed copies of
/// the top candidate. Duplicates of `archive_x` or of earlier picks are skipped.
pub fn elite_batch_select(
    final_pop: &[Individual],
    archive_x: &[Vec<f64>],
    problem: &ProblemSpec,
    batch: usize,
    eta_m: f64,
    rng: &mut Rng,
) -> Result<EliteBatch> {
    if final_pop.is_empty() {
        return Err(Error::Empty("final population"));
    }
    let top = final_pop
        .iter()
        .map(|p| p.pred_level)
        .fold(f64::NEG_INFINITY, f64::max);
    let at_top: Vec<usize> = (0..final_pop.len()).filter(|&i| final_pop[i].pred_level == top).collect();
    let pts: Vec<Vec<f64>> = at_top.iter().map(|&i| final_pop[i].pred_y.clone()).collect();
    let first = fast_nondominated_sort(&pts).swap_remove(0);
    let fpts: Vec<Vec<f64>> = first.iter().map(|&i| pts[i].clone()).collect();
    let cd = crowding_distance(&fpts);
    let mut elite: Vec<(usize, f64)> = first.iter().map(|&l| at_top[l]).zip(cd).collect();
    elite.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut seen: Vec<Vec<f64>> = archive_x.iter().map(|x| problem.to_unit(x)).collect();
    let mut chosen = Vec::with_capacity(batch);
    let candidates = elite.into_iter().map(|(i, _)| i).chain(level_first_order(final_pop));
    for i in candidates {
        if chosen.len() == batch {
            break;
        }
        let u = problem.to_unit(&final_pop[i].x);
        if !is_duplicate(&u, &seen) {
            seen.push(u);
            chosen.push(final_pop[i].x.clone());
        }
    }
    let mut perturbed = false;
    if chosen.len() < batch {
        perturbed = true;
        let best = &final_pop[level_first_order(final_pop)[0]].x;
        let (lower, upper) = (problem.lower(), problem.upper());
        let mut attempts = 0;
        while chosen.len() < batch {
            let mut x = best.clone();
            if attempts < 100 * batch {
                polynomial_mutation(&mut x, lower, upper, eta_m, 1.0, rng);
            } else {
                for (v, (l, h)) in x.iter_mut().zip(lower.iter().zip(upper)) {
                    *v = rng.random_range(*l..=*h);
                }
            }
            attempts += 1;
            let u = problem.to_unit(&x);
            if !is_duplicate(&u, &seen) {
                seen.push(u);
                chosen.push(x);
            }
        }
    }
    Ok(EliteBatch { xs: chosen, perturbed })
}
