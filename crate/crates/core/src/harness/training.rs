use crate::error::{Error, Result};
use crate::meta::{ActionPolicy, EpisodeOutcome, EpisodeSource};
use crate::problems::ProblemSpec;

use super::episode::{run_episode, EpisodeConfig};

/// Training episodes cycling through a fixed problem list.
///
/// Rewards need IGD online, so every problem must carry a reference front.
#[derive(Debug, Clone)]
pub struct ProblemRotation {
    problems: Vec<ProblemSpec>,
    config: EpisodeConfig,
}

impl ProblemRotation {
    pub fn new(problems: Vec<ProblemSpec>, config: EpisodeConfig) -> Result<Self> {
        if problems.is_empty() {
            return Err(Error::Empty("training problem list"));
        }
        if let Some(p) = problems.iter().find(|p| !p.has_reference_front()) {
            return Err(Error::NoReferenceFront(p.name().to_string()));
        }
        config.validate()?;
        Ok(Self { problems, config })
    }

    pub fn problem_for(&self, episode: usize) -> &ProblemSpec {
        &self.problems[episode % self.problems.len()]
    }
}

impl EpisodeSource for ProblemRotation {
    fn run(&self, episode: usize, seed: u64, policy: &mut dyn ActionPolicy) -> Result<EpisodeOutcome> {
        let problem = self.problem_for(episode);
        let config = EpisodeConfig {
            seed,
            ..self.config.clone()
        };
        let result = run_episode(problem, &config, policy)?;
        Ok(EpisodeOutcome {
            label: result.problem,
            transitions: result.transitions,
        })
    }
}
