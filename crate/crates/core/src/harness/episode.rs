//! The outer optimization loop: one policy-guided episode on one problem.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::metrics::archive_igd;
use crate::diffusion::{self, DiffusionConfig};
use crate::ela::{build_input_tensor, ElaInput};
use crate::error::{Error, Result};
use crate::meta::{
    action_interval, reward, select_region, ActionPolicy, ArchiveStats, FixedPolicy, RandomPolicy, Transition,
};
use crate::mmcci::{fit_all, AnchorSet, ConstraintHandler, ConstraintMode, FittedCci, LevelGrid};
use crate::problems::{lhs_sample, CycleRecord, EvaluatedSolution, ProblemSpec, RunArchive};
use crate::rng::{self, Stream};
use crate::saea::{elite_batch_select, run_inner, GenConfig};
use crate::surrogate::{GpConfig, SurrogateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_init: usize,
    pub fe_max: usize,
    /// Expensive evaluations per cycle.
    pub batch: usize,
    /// Level grid resolution.
    pub k: usize,
    /// Smallest region handed to the generator.
    pub min_region: usize,
    pub seed: u64,
    pub mode: ConstraintMode,
    /// Keep cycling past `fe_max` until the first feasible evaluation.
    pub continue_until_feasible: bool,
    /// Hard stop for `continue_until_feasible`.
    pub max_evaluations: usize,
    pub anchors: AnchorSet,
    pub diffusion: DiffusionConfig,
    pub evolution: GenConfig,
    pub gp: GpConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_init: 100,
            fe_max: 300,
            batch: 5,
            k: 40,
            min_region: 20,
            seed: 0,
            mode: ConstraintMode::MmCci,
            continue_until_feasible: false,
            max_evaluations: 1000,
            anchors: AnchorSet::default(),
            diffusion: DiffusionConfig::default(),
            evolution: GenConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.batch == 0 || self.min_region == 0 {
            return Err(Error::Config("n_init, batch and min_region must be positive".into()));
        }
        if self.fe_max <= self.n_init || (self.fe_max - self.n_init) % self.batch != 0 {
            return Err(Error::Config(format!(
                "fe_max - n_init = {} must be a positive multiple of batch {}",
                self.fe_max as i64 - self.n_init as i64,
                self.batch
            )));
        }
        if self.continue_until_feasible && self.max_evaluations < self.fe_max {
            return Err(Error::Config("max_evaluations must be at least fe_max".into()));
        }
        LevelGrid::new(self.k)?;
        self.diffusion.validate()?;
        self.evolution.validate()
    }

    /// Decision cycles of a budget-exact run.
    pub fn cycles(&self) -> usize {
        (self.fe_max - self.n_init) / self.batch
    }
}

/// One decision of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cycle: usize,
    /// FNV-1a hash of the encoder input the decision was made on.
    pub state_hash: u64,
    pub action: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub entries: Vec<TraceEntry>,
}

impl ActionTrace {
    pub fn actions(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.action).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hash of an encoder input, stable across runs and platforms.
pub fn state_hash(input: &ElaInput) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(input.population() as u64);
    h.write_u64(input.objectives() as u64);
    for v in input.pairs().data() {
        h.write_u64(v.to_bits());
    }
    h.write_u64(input.budget_fraction().to_bits());
    h.finish()
}

/// Fraction of decisions on which two traces agree.
pub fn decision_consistency(a: &ActionTrace, b: &ActionTrace) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
            context: "action trace length",
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("action traces"));
    }
    let same = a.entries.iter().zip(&b.entries).filter(|(x, y)| x.action == y.action).count();
    Ok(same as f64 / a.len() as f64)
}

/// Wall-clock seconds per episode phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total: f64,
    pub diffusion: f64,
    pub surrogate: f64,
    pub evolution: f64,
    pub policy: f64,
}

/// Everything produced by one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub problem: String,
    pub config: EpisodeConfig,
    pub archive: RunArchive,
    pub trace: ActionTrace,
    /// One per decision; the last is terminal.
    pub transitions: Vec<Transition>,
    /// Calibration per constraint; empty when the mode does not use it.
    pub cci: Vec<FittedCci>,
    pub final_igd: Option<f64>,
    pub timings: Timings,
}

impl EpisodeResult {
    pub fn total_reward(&self) -> f64 {
        self.archive.cycle_log.iter().map(|c| c.reward).sum()
    }

    /// 1-based index of the first feasible evaluation.
    pub fn evaluations_to_feasible(&self) -> Option<usize> {
        self.archive.evaluations_to_feasible()
    }
}

fn stats(archive: &RunArchive, front: Option<&[Vec<f64>]>) -> Result<ArchiveStats> {
    Ok(ArchiveStats {
        max_level: archive.max_level(),
        igd: match front {
            Some(f) => archive_igd(&archive.solutions, f)?,
            None => None,
        },
    })
}

fn evaluate(
    problem: &ProblemSpec,
    handler: &ConstraintHandler,
    x: Vec<f64>,
    cycle: usize,
) -> Result<EvaluatedSolution> {
    let (y, g) = problem.evaluate(&x)?;
    let level = handler.archive_level(&g)?;
    Ok(EvaluatedSolution { x, y, g, level, cycle })
}

fn encoder_input(archive: &RunArchive, budget: usize) -> Result<Arc<ElaInput>> {
    let evaluations = archive.len().min(budget);
    Ok(Arc::new(build_input_tensor(
        &archive.objectives(),
        &archive.levels(),
        evaluations,
        budget,
    )?))
}

/// Run one episode under `policy`.
///
/// The archive holds exactly `fe_max` evaluations unless
/// `continue_until_feasible` extends the run.
pub fn run_episode(problem: &ProblemSpec, config: &EpisodeConfig, policy: &mut dyn ActionPolicy) -> Result<EpisodeResult> {
    config.validate()?;
    let started = Instant::now();
    let mut timings = Timings::default();
    let front = problem.reference_front().ok();
    let grid = LevelGrid::new(config.k)?;
    let seed = config.seed;

    let design = lhs_sample(config.n_init, problem, seed)?;
    let mut raw = Vec::with_capacity(design.len());
    for x in design {
        let (y, g) = problem.evaluate(&x)?;
        raw.push((x, y, g));
    }
    let cci = if config.mode.uses_cci() {
        let gs: Vec<Vec<f64>> = raw.iter().map(|r| r.2.clone()).collect();
        fit_all(&gs, problem.n_con(), &config.anchors)?
    } else {
        Vec::new()
    };
    let handler = ConstraintHandler::new(config.mode, grid, cci.iter().map(|f| f.params).collect());
    let capacity = (!config.continue_until_feasible).then_some(config.fe_max);
    let mut archive = RunArchive::new(capacity);
    for (x, y, g) in raw {
        let level = handler.archive_level(&g)?;
        archive.push(EvaluatedSolution { x, y, g, level, cycle: 0 })?;
    }

    let mut trace = ActionTrace::default();
    let mut transitions: Vec<Transition> = Vec::new();
    let mut prev = stats(&archive, front)?;
    let mut state = encoder_input(&archive, config.fe_max)?;
    let mut cycle = 0;
    loop {
        let evals = archive.len();
        let left = if evals < config.fe_max {
            config.fe_max - evals
        } else if config.continue_until_feasible
            && archive.feasible_count() == 0
            && evals < config.max_evaluations
        {
            config.max_evaluations - evals
        } else {
            break;
        };
        cycle += 1;
        let batch = config.batch.min(left);
        let cycle_err = |e: Error| Error::InvalidArgument(format!("{} cycle {cycle}: {e}", problem.name()));

        let t = Instant::now();
        let action = policy.choose(&state).map_err(cycle_err)?;
        timings.policy += t.elapsed().as_secs_f64();
        trace.entries.push(TraceEntry {
            cycle,
            state_hash: state_hash(&state),
            action,
        });

        let region = select_region(&archive.solutions, action_interval(action)?, config.min_region);
        let region_x: Vec<Vec<f64>> = region.iter().map(|&i| archive.solutions[i].x.clone()).collect();

        let t = Instant::now();
        let mut drng = rng::stream(seed, Stream::Diffusion, cycle as u64);
        let (model, _) = diffusion::train(&region_x, problem.lower(), problem.upper(), &config.diffusion, &mut drng)
            .map_err(cycle_err)?;
        let initial = diffusion::sample(
            &model,
            &config.diffusion,
            config.evolution.pop_size,
            problem.lower(),
            problem.upper(),
            &mut drng,
        )
        .map_err(cycle_err)?;
        timings.diffusion += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let surrogates = SurrogateSet::fit(problem, &archive.solutions, &config.gp).map_err(cycle_err)?;
        timings.surrogate += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut erng = rng::stream(seed, Stream::Evolution, cycle as u64);
        let final_pop = run_inner(initial, problem, &surrogates, &handler, &config.evolution, &mut erng)
            .map_err(cycle_err)?;
        let archive_x: Vec<Vec<f64>> = archive.solutions.iter().map(|s| s.x.clone()).collect();
        let mut irng = rng::stream(seed, Stream::Infill, cycle as u64);
        let elite = elite_batch_select(
            &final_pop,
            &archive_x,
            problem,
            batch,
            config.evolution.eta_m,
            &mut irng,
        )
        .map_err(cycle_err)?;
        timings.evolution += t.elapsed().as_secs_f64();

        for x in elite.xs {
            archive.push(evaluate(problem, &handler, x, cycle)?)?;
        }
        let curr = stats(&archive, front)?;
        let r = reward(&prev, &curr)?;
        archive.cycle_log.push(CycleRecord {
            cycle,
            action: Some(action),
            reward: r,
            igd: curr.igd,
            max_level: curr.max_level,
            feasible_count: archive.feasible_count(),
            perturbed_fallback: elite.perturbed,
        });
        let next = encoder_input(&archive, config.fe_max)?;
        transitions.push(Transition {
            state,
            action,
            reward: r,
            next_state: Arc::clone(&next),
            terminal: false,
        });
        state = next;
        prev = curr;
    }
    if let Some(last) = transitions.last_mut() {
        last.terminal = true;
    }
    timings.total = started.elapsed().as_secs_f64();
    Ok(EpisodeResult {
        problem: problem.name().to_string(),
        config: config.clone(),
        final_igd: prev.igd,
        archive,
        trace,
        transitions,
        cci,
        timings,
    })
}

/// Ablation substituted into the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    /// Replace the level mapping; actions still come from the guide policy.
    Constraint(ConstraintMode),
    RandomPolicy,
    FixedAction(usize),
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::Constraint(m) => write!(f, "{m}"),
            Baseline::RandomPolicy => f.write_str("random_policy"),
            Baseline::FixedAction(a) => write!(f, "fixed_action:{a}"),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_policy" => Ok(Baseline::RandomPolicy),
            "mmcci" => Err(Error::Config("mmcci is the reference method, not a baseline".into())),
            _ => {
                if let Some(a) = s.strip_prefix("fixed_action:") {
                    let a = a
                        .parse()
                        .map_err(|_| Error::Config(format!("bad fixed action in `{s}`")))?;
                    action_interval(a)?;
                    Ok(Baseline::FixedAction(a))
                } else {
                    Ok(Baseline::Constraint(s.parse()?))
                }
            }
        }
    }
}

/// Run the loop with one component swapped out. `guide` picks actions for
/// the constraint-mapping ablations and is ignored otherwise.
pub fn run_baseline(
    problem: &ProblemSpec,
    config: &EpisodeConfig,
    baseline: Baseline,
    guide: &mut dyn ActionPolicy,
) -> Result<EpisodeResult> {
    match baseline {
        Baseline::Constraint(mode) => {
            let cfg = EpisodeConfig {
                mode,
                ..config.clone()
            };
            run_episode(problem, &cfg, guide)
        }
        Baseline::RandomPolicy => run_episode(problem, config, &mut RandomPolicy::new(config.seed)),
        Baseline::FixedAction(a) => run_episode(problem, config, &mut FixedPolicy(a)),
    }
}

/// Lets `driver` steer while recording what `shadow` would have chosen on
/// the same states.
pub struct ShadowPolicy<'a> {
    driver: &'a mut dyn ActionPolicy,
    shadow: &'a mut dyn ActionPolicy,
    shadow_actions: Vec<usize>,
}

impl<'a> ShadowPolicy<'a> {
    pub fn new(driver: &'a mut dyn ActionPolicy, shadow: &'a mut dyn ActionPolicy) -> Self {
        Self {
            driver,
            shadow,
            shadow_actions: Vec::new(),
        }
    }
}

impl ActionPolicy for ShadowPolicy<'_> {
    fn choose(&mut self, input: &ElaInput) -> Result<usize> {
        self.shadow_actions.push(self.shadow.choose(input)?);
        self.driver.choose(input)
    }
}

/// Query two policies side by side along the trajectory driven by `a` and
/// return both traces.
pub fn paired_traces(
    problem: &ProblemSpec,
    config: &EpisodeConfig,
    a: &mut dyn ActionPolicy,
    b: &mut dyn ActionPolicy,
) -> Result<(ActionTrace, ActionTrace)> {
    let mut shadow = ShadowPolicy::new(a, b);
    let result = run_episode(problem, config, &mut shadow)?;
    let shadow_trace = ActionTrace {
        entries: result
            .trace
            .entries
            .iter()
            .zip(&shadow.shadow_actions)
            .map(|(e, &action)| TraceEntry { action, ..*e })
            .collect(),
    };
    Ok((result.trace, shadow_trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::toy_b;

    /// Budget-exact but cheap: 3 cycles with short generator training.
    fn quick() -> EpisodeConfig {
        EpisodeConfig {
            n_init: 20,
            fe_max: 35,
            min_region: 10,
            diffusion: DiffusionConfig {
                epochs: 5,
                ..DiffusionConfig::default()
            },
            evolution: GenConfig {
                pop_size: 20,
                generations: 3,
                ..GenConfig::default()
            },
            ..EpisodeConfig::default()
        }
    }

    #[test]
    fn budget_and_bookkeeping() {
        let p = toy_b(3).unwrap();
        let r = run_episode(&p, &quick(), &mut RandomPolicy::new(1)).unwrap();
        assert_eq!(r.archive.len(), 35);
        assert_eq!(r.archive.cycle_log.len(), 3);
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.transitions.len(), 3);
        assert!(r.transitions[2].terminal && !r.transitions[1].terminal);
        assert_eq!(r.transitions[0].next_state, r.transitions[1].state);
        assert_eq!(r.archive.cycle_log.last().unwrap().max_level, r.archive.max_level());
        assert!(r.transitions.iter().all(|t| t.reward.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(EpisodeConfig::default().validate().is_ok());
        assert_eq!(EpisodeConfig::default().cycles(), 40);
        let bad = EpisodeConfig {
            fe_max: 302,
            ..EpisodeConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn consistency_counting() {
        let t = |acts: &[usize]| ActionTrace {
            entries: acts
                .iter()
                .enumerate()
                .map(|(i, &a)| TraceEntry {
                    cycle: i + 1,
                    state_hash: 0,
                    action: a,
                })
                .collect(),
        };
        let mut a = vec![1; 40];
        let b = vec![2; 40];
        assert_eq!(decision_consistency(&t(&a), &t(&a)).unwrap(), 1.0);
        assert_eq!(decision_consistency(&t(&a), &t(&b)).unwrap(), 0.0);
        a[0] = 2;
        assert_eq!(decision_consistency(&t(&a), &t(&b)).unwrap(), 0.025);
        assert!(decision_consistency(&t(&a), &t(&b[..39])).is_err());
    }

    #[test]
    fn baseline_names() {
        assert_eq!("cv".parse::<Baseline>().unwrap(), Baseline::Constraint(ConstraintMode::Cv));
        assert_eq!("fixed_action:4".parse::<Baseline>().unwrap(), Baseline::FixedAction(4));
        assert!("fixed_action:10".parse::<Baseline>().is_err());
        for b in [Baseline::RandomPolicy, Baseline::FixedAction(3), Baseline::Constraint(ConstraintMode::Tanh)] {
            assert_eq!(b.to_string().parse::<Baseline>().unwrap(), b);
        }
    }

    #[test]
    fn cv_mode_skips_calibration() {
        let p = toy_b(3).unwrap();
        let r = run_baseline(&p, &quick(), Baseline::Constraint(ConstraintMode::Cv), &mut FixedPolicy(0)).unwrap();
        assert!(r.cci.is_empty());
        assert!(r.archive.solutions.iter().all(|s| s.level == 0.0 || s.level == 1.0));
    }
}
