use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::EvaluatedSolution;

/// Number of discrete region actions.
pub const NUM_ACTIONS: usize = 10;

/// Lower ends of the upper-tail intervals `[τ, 1]` (actions 0..5).
pub const TAIL_THRESHOLDS: [f64; 5] = [0.0, 0.45, 0.70, 0.90, 1.0];

/// Levels closer than this to an interval end count as inside, so grid
/// levels such as `1 - 22/40` land in `[0.45, 1]`.
const LEVEL_TOL: f64 = 1e-12;

/// Closed level interval targeted by an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelInterval {
    pub lo: f64,
    pub hi: f64,
}

impl LevelInterval {
    pub fn contains(&self, level: f64) -> bool {
        level >= self.lo - LEVEL_TOL && level <= self.hi + LEVEL_TOL
    }

    /// Distance of a level to the interval, zero inside.
    pub fn distance(&self, level: f64) -> f64 {
        if self.contains(level) {
            0.0
        } else {
            (self.lo - level).max(level - self.hi).max(0.0)
        }
    }
}

/// Actions `0..5` select `[τ_k, 1]`; actions `5..10` select the fifths
/// `[(k-1)/5, k/5]`.
pub fn action_interval(action: usize) -> Result<LevelInterval> {
    match action {
        0..=4 => Ok(LevelInterval {
            lo: TAIL_THRESHOLDS[action],
            hi: 1.0,
        }),
        5..=9 => {
            let k = (action - 5) as f64;
            Ok(LevelInterval {
                lo: k / 5.0,
                hi: (k + 1.0) / 5.0,
            })
        }
        _ => Err(Error::InvalidArgument(format!(
            "action {action} outside 0..{NUM_ACTIONS}"
        ))),
    }
}

/// Human-readable action label, e.g. `tail[0.45,1]`.
pub fn action_label(action: usize) -> Result<String> {
    let iv = action_interval(action)?;
    let kind = if action < 5 { "tail" } else { "band" };
    Ok(format!("{kind}[{},{}]", iv.lo, iv.hi))
}

/// Indices of the archive members whose level lies in `interval`, widened by
/// nearest-level neighbours until `min_count` members (or the whole archive)
/// are included. Ties prefer higher levels, then earlier insertion.
pub fn select_region(archive: &[EvaluatedSolution], interval: LevelInterval, min_count: usize) -> Vec<usize> {
    let mut inside: Vec<usize> = (0..archive.len())
        .filter(|&i| interval.contains(archive[i].level))
        .collect();
    let target = min_count.min(archive.len());
    if inside.len() >= target {
        return inside;
    }
    let mut outside: Vec<usize> = (0..archive.len())
        .filter(|&i| !interval.contains(archive[i].level))
        .collect();
    outside.sort_by(|&a, &b| {
        let (la, lb) = (archive[a].level, archive[b].level);
        interval
            .distance(la)
            .total_cmp(&interval.distance(lb))
            .then(lb.total_cmp(&la))
            .then(a.cmp(&b))
    });
    let need = target - inside.len();
    inside.extend(outside.into_iter().take(need));
    inside
}

/// Archive summary entering the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveStats {
    pub max_level: f64,
    /// Feasible-front IGD; `None` while no feasible solution exists.
    pub igd: Option<f64>,
}

/// Level gain plus relative IGD improvement.
pub fn reward(prev: &ArchiveStats, curr: &ArchiveStats) -> Result<f64> {
    let level_gain = curr.max_level - prev.max_level;
    let igd_gain = match (prev.igd, curr.igd) {
        (None, _) => 0.0,
        (Some(p), _) if p == 0.0 => 0.0,
        (Some(_), None) => return Err(Error::IgdVanished),
        (Some(p), Some(c)) => (p - c) / p,
    };
    let r = level_gain + igd_gain;
    if !r.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sol(level: f64) -> EvaluatedSolution {
        EvaluatedSolution {
            x: vec![],
            y: vec![],
            g: vec![],
            level,
            cycle: 0,
        }
    }

    #[test]
    fn intervals() {
        assert_eq!(action_interval(1).unwrap(), LevelInterval { lo: 0.45, hi: 1.0 });
        assert_eq!(action_interval(4).unwrap(), LevelInterval { lo: 1.0, hi: 1.0 });
        let band = action_interval(7).unwrap();
        assert!((band.lo - 0.4).abs() < 1e-15 && (band.hi - 0.6).abs() < 1e-15);
        assert!(action_interval(10).is_err());
        assert_eq!(action_label(1).unwrap(), "tail[0.45,1]");
        assert!(action_interval(1).unwrap().contains(1.0 - 22.0 / 40.0));
    }

    #[test]
    fn region_expansion_order() {
        let mut archive: Vec<_> = (0..5).map(|_| sol(0.5)).collect();
        archive.extend([sol(0.3), sol(0.725), sol(0.65), sol(0.675), sol(0.675)]);
        let iv = LevelInterval { lo: 0.45, hi: 0.7 };
        assert_eq!(select_region(&archive, iv, 8), vec![0, 1, 2, 3, 4, 7, 8, 9]);
        // 0.725 is 0.025 away and beats 0.3 (0.15 away)
        let picked = select_region(&archive, iv, 10);
        assert_eq!(&picked[8..], &[6, 5]);
        assert_eq!(select_region(&archive[..3], iv, 20).len(), 3);
    }

    #[test]
    fn ties_prefer_higher_level() {
        let archive = vec![sol(0.3), sol(0.7)];
        let iv = LevelInterval { lo: 0.5, hi: 0.5 };
        assert_eq!(select_region(&archive, iv, 1), vec![1]);
    }

    #[test]
    fn reward_cases() {
        let s = |l, i| ArchiveStats { max_level: l, igd: i };
        assert_eq!(reward(&s(0.5, Some(1.0)), &s(0.5, Some(1.0))).unwrap(), 0.0);
        let r = reward(&s(0.5, Some(2.0)), &s(0.6, Some(1.0))).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(reward(&s(0.9, None), &s(0.9, None)).unwrap(), 0.0);
        assert!(matches!(reward(&s(1.0, Some(1.0)), &s(1.0, None)), Err(Error::IgdVanished)));
        assert_eq!(reward(&s(1.0, Some(0.0)), &s(1.0, Some(0.5))).unwrap(), 0.0);
    }
}
