//! Experiment configuration: a strict JSON schema with documented defaults.
//! The `AUTOCURL_SEED` environment variable overrides the configured seed.

use crate::curriculum::{CurriculumConfig, CurriculumMode};
use crate::tasks::EnvParams;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: String,
    pub params: EnvParams,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            kind: "lockchain".into(),
            params: EnvParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    pub mode: String,
    pub k: usize,
    pub t: usize,
    pub m: usize,
    pub p_target: f64,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            mode: "demostart".into(),
            k: 8,
            t: 4,
            m: 50,
            p_target: 0.2,
        }
    }
}

impl CurriculumSection {
    pub fn to_config(&self) -> Result<CurriculumConfig, ConfigError> {
        let mode = CurriculumMode::parse(&self.mode)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cfg = CurriculumConfig {
            mode,
            k: self.k,
            t: self.t,
            m: self.m,
            p_target: self.p_target,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub discount: f64,
    pub learning_rate: f64,
    /// Hyperbolic decay of the learning rate per update batch; 0 = constant.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub snippet_len: usize,
    pub max_uses: u32,
    pub capacity: usize,
    pub epsilon: f64,
    /// Per-actor exploration overrides (actor i uses entry i % len); empty
    /// means all actors share `epsilon`.
    pub actor_epsilons: Vec<f64>,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            discount: 0.99,
            learning_rate: 0.1,
            lr_decay: 0.0,
            batch_size: 256,
            snippet_len: 10,
            max_uses: 2,
            capacity: 5000,
            epsilon: 0.05,
            actor_epsilons: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeSection {
    pub actor_count: usize,
    pub budget: u64,
    pub updates_per_round: usize,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// "deterministic" or "parallel".
    pub schedule: String,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        Self {
            actor_count: 4,
            budget: 2_000_000,
            updates_per_round: 8,
            eval_every: 50_000,
            eval_episodes: 200,
            schedule: "deterministic".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub episodes: usize,
    pub epsilon: f64,
    pub noise_scale: f64,
    pub dropout_prob: f64,
    pub decoy_channels: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            episodes: 1000,
            epsilon: 0.02,
            noise_scale: 0.05,
            dropout_prob: 0.05,
            decoy_channels: 8,
            hidden: vec![64],
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 256,
            epochs: 40,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvSection,
    pub curriculum: CurriculumSection,
    pub learner: LearnerSection,
    pub runtime: RuntimeSection,
    pub distill: DistillSection,
}

impl ExperimentConfig {
    /// Loads a config file, fills defaults, and applies the `AUTOCURL_SEED`
    /// override if set.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        cfg.apply_env_override()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env_override(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var("AUTOCURL_SEED") {
            self.seed = v.parse().map_err(|_| {
                ConfigError::Invalid(format!("AUTOCURL_SEED is not an integer: {v:?}"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.curriculum.to_config()?;
        if self.runtime.budget == 0 && self.runtime.eval_every == 0 {
            return Err(ConfigError::Invalid("eval_every must be > 0".into()));
        }
        if !matches!(self.runtime.schedule.as_str(), "deterministic" | "parallel") {
            return Err(ConfigError::Invalid(format!(
                "unknown schedule {:?} (expected deterministic or parallel)",
                self.runtime.schedule
            )));
        }
        if self.runtime.actor_count == 0 {
            return Err(ConfigError::Invalid("actor_count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.learner.epsilon) {
            return Err(ConfigError::Invalid("epsilon outside [0,1]".into()));
        }
        if self.learner.actor_epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(ConfigError::Invalid("actor_epsilons entry outside [0,1]".into()));
        }
        Ok(())
    }

    /// Writes the effective (post-default) config next to other artifacts so
    /// a run can be reproduced from its output directory.
    pub fn dump(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    // AUTOCURL_SEED is process-global, so tests that call load() serialize
    static ENV_LOCK: Mutex<()> = Mutex::new(());

    fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("config.json");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn empty_object_yields_defaults() {
        let _g = ENV_LOCK.lock().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "{}");
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.curriculum.k, 8);
        assert_eq!(cfg.curriculum.t, 4);
        assert_eq!(cfg.curriculum.m, 50);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let _g = ENV_LOCK.lock().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "{\n  \"sedd\": 3\n}");
        match ExperimentConfig::load(&path) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn seed_env_var_overrides() {
        let _g = ENV_LOCK.lock().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "{\"seed\": 7}");
        std::env::set_var("AUTOCURL_SEED", "99");
        let cfg = ExperimentConfig::load(&path);
        std::env::remove_var("AUTOCURL_SEED");
        assert_eq!(cfg.unwrap().seed, 99);
    }

    #[test]
    fn effective_config_round_trips() {
        let _g = ENV_LOCK.lock().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 5;
        cfg.env.kind = "peginsert".into();
        let path = dir.path().join("effective.json");
        cfg.dump(&path).unwrap();
        let reloaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(reloaded, cfg);
    }

    #[test]
    fn bad_mode_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.curriculum.mode = "nope".into();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
