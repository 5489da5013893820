//! Flat `key = value` configuration files.
//!
//! Keys mirror the nested config structs with dots, e.g. `diffusion.epochs`
//! or `dqn.gamma`; episode fields sit at the top level. Lists are comma
//! separated and `none` clears an optional value. Lines starting with `#`
//! are comments.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::episode::EpisodeConfig;
use crate::ela::ElaConfig;
use crate::error::{Error, Result};
use crate::meta::{DqnConfig, EpsilonSchedule, TrainConfig};
use crate::mmcci::AnchorSet;

/// Every tunable of the CLI in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub episode: EpisodeConfig,
    pub episodes: usize,
    pub workers: usize,
    pub dqn: DqnConfig,
    pub epsilon: EpsilonSchedule,
    pub ela: ElaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            episode: EpisodeConfig::default(),
            episodes: t.episodes,
            workers: t.workers,
            dqn: t.dqn,
            epsilon: t.epsilon,
            ela: t.ela,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.dqn.validate()?;
        self.ela.validate()?;
        AnchorSet::new(
            self.episode.anchors.quantiles().to_vec(),
            self.episode.anchors.targets().to_vec(),
        )?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            workers: self.workers,
            seed: self.episode.seed,
            dqn: self.dqn.clone(),
            epsilon: self.epsilon,
            ela: self.ela,
        }
    }

    /// Parse a flat config on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Override one dotted key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        }
        *slot = parse_value(slot, raw).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    /// Render as a flat config that [`RunConfig::parse`] reads back exactly.
    pub fn to_flat(&self) -> Result<String> {
        let tree = serde_json::to_value(self)?;
        let mut out = String::new();
        flatten("", &tree, &mut out);
        Ok(out)
    }
}

fn parse_value(current: &Value, raw: &str) -> std::result::Result<Value, String> {
    let number = |s: &str| -> std::result::Result<Value, String> {
        let s = s.trim();
        if let Ok(u) = s.parse::<u64>() {
            return Ok(Value::from(u));
        }
        s.parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("`{s}` is not a number"))
    };
    match current {
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|e| e.to_string()),
        Value::Number(_) => number(raw),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Array(_) if raw.is_empty() => Ok(Value::Array(Vec::new())),
        Value::Array(_) => raw.split(',').map(number).collect::<std::result::Result<_, _>>().map(Value::Array),
        Value::Null if raw == "none" => Ok(Value::Null),
        Value::Null => number(raw),
        Value::Object(_) => Err("expected a leaf key".into()),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => flatten_map(prefix, map, out),
        leaf => {
            let text = match leaf {
                Value::Null => "none".to_string(),
                Value::String(s) => s.clone(),
                Value::Array(items) => items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{prefix} = {text}\n"));
        }
    }
}

fn flatten_map(prefix: &str, map: &Map<String, Value>, out: &mut String) {
    for (k, v) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        flatten(&key, v, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmcci::ConstraintMode;

    #[test]
    fn parse_overrides() {
        let cfg = RunConfig::parse(
            "# quick profile\nseed = 7\nmode = cv\ndiffusion.epochs = 20\n\
             gp.noise_levels = 1e-6, 1e-3\nevolution.mutation_prob = 0.5\ndqn.gamma=0.9\nworkers = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.episode.seed, 7);
        assert_eq!(cfg.episode.mode, ConstraintMode::Cv);
        assert_eq!(cfg.episode.diffusion.epochs, 20);
        assert_eq!(cfg.episode.gp.noise_levels, vec![1e-6, 1e-3]);
        assert_eq!(cfg.episode.evolution.mutation_prob, Some(0.5));
        assert_eq!(cfg.dqn.gamma, 0.9);
        assert_eq!(cfg.workers, 2);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("diffusion = 1").is_err());
        assert!(RunConfig::parse("seed 1").is_err());
        assert!(RunConfig::parse("diffusion.epochs = many").is_err());
        assert!(RunConfig::parse("diffusion.epochs = -3").is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("evolution.mutation_prob", "0.25").unwrap();
        cfg.set("beta_placeholder_absent", "1").unwrap_err();
        let text = cfg.to_flat().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        let back = RunConfig::parse(&RunConfig::default().to_flat().unwrap()).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
