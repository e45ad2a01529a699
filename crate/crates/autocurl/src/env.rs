//! Environment contract: sparse binary reward, episode termination on first
//! success, full-state snapshot/restore, and initialization from a task
//! parameter record.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Compact integer feature observation; doubles as the tabular policy key.
pub type Obs = Vec<i64>;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("snapshot incompatible: expected {expected_kind} v{expected_version}, got {got_kind} v{got_version}")]
    SnapshotIncompatible {
        expected_kind: String,
        expected_version: u32,
        got_kind: String,
        got_version: u32,
    },
    #[error("invalid goal: {0}")]
    GoalInvalid(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("invalid action {action} for {kind} (action count {count})")]
    InvalidAction {
        kind: &'static str,
        action: usize,
        count: usize,
    },
    #[error("oracle stuck: {0}")]
    OracleStuck(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Opaque, restorable full environment state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    pub env_kind: String,
    pub schema_version: u32,
    pub payload: Vec<u8>,
}

impl StateSnapshot {
    /// Length-prefixed little-endian record framing.
    pub fn encode(&self, w: &mut ByteWriter) {
        w.put_str(&self.env_kind);
        w.put_u32(self.schema_version);
        w.put_bytes(&self.payload);
    }

    pub fn decode(r: &mut ByteReader) -> Result<Self, CodecError> {
        Ok(Self {
            env_kind: r.get_str()?,
            schema_version: r.get_u32()?,
            payload: r.get_bytes()?.to_vec(),
        })
    }
}

/// Per-episode environment settings: the dynamics, perturbation, and visual
/// randomization knobs plus the step limit.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSettings {
    pub dynamics_seed: u64,
    /// Chance that an executed action is replaced by a uniformly random one.
    pub slip_probability: f64,
    /// Chance per step of a random object nudge (ignored while held).
    pub perturbation_rate: f64,
    /// Maximum nudge distance in cells.
    pub perturbation_magnitude: i64,
    pub observation_seed: u64,
    pub episode_step_limit: u32,
}

impl EnvSettings {
    pub fn nominal(step_limit: u32) -> Self {
        Self {
            dynamics_seed: 0,
            slip_probability: 0.0,
            perturbation_rate: 0.0,
            perturbation_magnitude: 0,
            observation_seed: 0,
            episode_step_limit: step_limit,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.slip_probability) {
            return Err(EnvError::InvalidSettings(format!(
                "slip_probability {} outside [0,1]",
                self.slip_probability
            )));
        }
        if !(0.0..=1.0).contains(&self.perturbation_rate) {
            return Err(EnvError::InvalidSettings(format!(
                "perturbation_rate {} outside [0,1]",
                self.perturbation_rate
            )));
        }
        if self.perturbation_magnitude < 0 {
            return Err(EnvError::InvalidSettings(
                "perturbation_magnitude must be >= 0".into(),
            ));
        }
        if self.episode_step_limit < 1 {
            return Err(EnvError::InvalidSettings("episode_step_limit must be >= 1".into()));
        }
        Ok(())
    }

    fn encode(&self, w: &mut ByteWriter) {
        w.put_u64(self.dynamics_seed);
        w.put_f64(self.slip_probability);
        w.put_f64(self.perturbation_rate);
        w.put_i64(self.perturbation_magnitude);
        w.put_u64(self.observation_seed);
        w.put_u32(self.episode_step_limit);
    }

    fn decode(r: &mut ByteReader) -> Result<Self, CodecError> {
        Ok(Self {
            dynamics_seed: r.get_u64()?,
            slip_probability: r.get_f64()?,
            perturbation_rate: r.get_f64()?,
            perturbation_magnitude: r.get_i64()?,
            observation_seed: r.get_u64()?,
            episode_step_limit: r.get_u32()?,
        })
    }
}

/// Declared randomization ranges an env samples target settings from.
#[derive(Debug, Clone)]
pub struct RandomizationRanges {
    pub slip: (f64, f64),
    pub perturbation_rate: (f64, f64),
    pub perturbation_magnitude: i64,
    pub episode_step_limit: u32,
}

impl RandomizationRanges {
    pub fn sample(&self, rng: &mut dyn RngCore) -> EnvSettings {
        EnvSettings {
            dynamics_seed: rng.next_u64(),
            slip_probability: sample_range(rng, self.slip),
            perturbation_rate: sample_range(rng, self.perturbation_rate),
            perturbation_magnitude: self.perturbation_magnitude,
            observation_seed: rng.next_u64(),
            episode_step_limit: self.episode_step_limit,
        }
    }
}

fn sample_range(rng: &mut dyn RngCore, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Env-specific goal encoding (e.g. the die face that must end up on top).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalSpec(pub i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Hard,
}

#[derive(Debug, Clone)]
pub enum StartState {
    /// Fresh draw from the env's native initial distribution, keyed by seed.
    TargetDraw { seed: u64 },
    /// Restore a recorded demonstration state.
    DemoState(StateSnapshot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Target,
    Demo {
        demo_id: String,
        step_index: usize,
        chunk_index: usize,
    },
}

/// Task parameters: the full specification of one episode.
#[derive(Debug, Clone)]
pub struct TaskParams {
    pub start: StartState,
    pub settings: EnvSettings,
    pub goal: Option<GoalSpec>,
    pub provenance: Provenance,
    pub difficulty: Option<Difficulty>,
}

impl TaskParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.settings.validate()?;
        let target_start = matches!(self.start, StartState::TargetDraw { .. });
        let target_prov = self.provenance == Provenance::Target;
        if target_start != target_prov {
            return Err(EnvError::InvalidSettings(
                "provenance must be Target exactly when start is TargetDraw".into(),
            ));
        }
        Ok(())
    }

    pub fn is_demo(&self) -> bool {
        matches!(self.provenance, Provenance::Demo { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Observation the action was taken from.
    pub observation: Obs,
    /// Executed action (post-slip).
    pub action: usize,
    pub reward: u8,
    pub terminal: bool,
    pub truncated: bool,
    pub next_observation: Obs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Training,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleStyle {
    Optimal,
    Suboptimal { detour_rate: f64 },
    /// Solves only a section of the task (or only certain start conditions).
    Partial,
}

/// Episode bookkeeping shared by every env: settings, counters, and the
/// internal RNG whose state travels with snapshots.
#[derive(Debug, Clone)]
pub struct EpisodeCore {
    pub settings: EnvSettings,
    pub goal: Option<GoalSpec>,
    pub difficulty: Option<Difficulty>,
    pub steps: u32,
    pub finished: bool,
    pub success_granted: bool,
    pub rng: ChaCha8Rng,
}

impl Default for EpisodeCore {
    fn default() -> Self {
        Self {
            settings: EnvSettings::nominal(1),
            goal: None,
            difficulty: None,
            steps: 0,
            finished: false,
            success_granted: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl EpisodeCore {
    pub fn begin(
        &mut self,
        settings: EnvSettings,
        goal: Option<GoalSpec>,
        difficulty: Option<Difficulty>,
        episode_seed: u64,
    ) {
        self.settings = settings;
        self.goal = goal;
        self.difficulty = difficulty;
        self.steps = 0;
        self.finished = false;
        self.success_granted = false;
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed);
    }

    pub fn ensure_active(&self) -> Result<(), EnvError> {
        if self.finished {
            Err(EnvError::EpisodeFinished)
        } else {
            Ok(())
        }
    }

    /// Slip rule: with probability `slip_probability` the executed action is
    /// resampled uniformly over the action set.
    pub fn maybe_slip(&mut self, action: usize, action_count: usize) -> usize {
        if self.settings.slip_probability > 0.0
            && self.rng.gen::<f64>() < self.settings.slip_probability
        {
            self.rng.gen_range(0..action_count)
        } else {
            action
        }
    }

    pub fn perturbation_roll(&mut self) -> Option<(i64, i64)> {
        let rate = self.settings.perturbation_rate;
        let mag = self.settings.perturbation_magnitude;
        if rate > 0.0 && mag > 0 && self.rng.gen::<f64>() < rate {
            let dx = self.rng.gen_range(-mag..=mag);
            let dy = self.rng.gen_range(-mag..=mag);
            Some((dx, dy))
        } else {
            None
        }
    }

    /// Finishes one step: success is evaluated after the state update, the
    /// reward is granted at most once, and truncation is distinct from
    /// termination.
    pub fn conclude_step(&mut self, success: bool) -> (u8, bool, bool) {
        self.steps += 1;
        let reward = if success && !self.success_granted {
            self.success_granted = true;
            1
        } else {
            0
        };
        let terminal = success;
        let truncated = !terminal && self.steps >= self.settings.episode_step_limit;
        self.finished = terminal || truncated;
        (reward, terminal, truncated)
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        self.settings.encode(w);
        match self.goal {
            Some(GoalSpec(g)) => {
                w.put_bool(true);
                w.put_i64(g);
            }
            None => w.put_bool(false),
        }
        match self.difficulty {
            Some(Difficulty::Easy) => w.put_u8(1),
            Some(Difficulty::Hard) => w.put_u8(2),
            None => w.put_u8(0),
        }
        w.put_u32(self.steps);
        w.put_bool(self.finished);
        w.put_bool(self.success_granted);
        w.put_raw(&self.rng.get_seed());
        w.put_u128(self.rng.get_word_pos());
    }

    pub fn decode(r: &mut ByteReader) -> Result<Self, CodecError> {
        let settings = EnvSettings::decode(r)?;
        let goal = if r.get_bool()? {
            Some(GoalSpec(r.get_i64()?))
        } else {
            None
        };
        let difficulty = match r.get_u8()? {
            1 => Some(Difficulty::Easy),
            2 => Some(Difficulty::Hard),
            _ => None,
        };
        let steps = r.get_u32()?;
        let finished = r.get_bool()?;
        let success_granted = r.get_bool()?;
        let seed: [u8; 32] = r.get_raw(32)?.try_into().unwrap();
        let word_pos = r.get_u128()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        Ok(Self {
            settings,
            goal,
            difficulty,
            steps,
            finished,
            success_granted,
            rng,
        })
    }
}

/// The contract every task must satisfy. Instances are single-threaded and
/// owned by one actor; they may be created on and moved between threads.
pub trait Env: Send {
    fn kind(&self) -> &'static str;

    fn schema_version(&self) -> u32 {
        1
    }

    fn action_count(&self) -> usize;

    fn randomization(&self) -> RandomizationRanges;

    fn supports_difficulty(&self) -> bool {
        false
    }

    fn goal_conditioned(&self) -> bool {
        false
    }

    /// Installs the task parameters: a restored snapshot or a fresh native
    /// draw, plus settings and goal; the step counter is zeroed. `rng` seeds
    /// the episode's internal randomness so repeated episodes on one TP are
    /// independent draws.
    fn reset_with(&mut self, tp: &TaskParams, rng: &mut dyn RngCore) -> Result<Obs, EnvError>;

    fn step(&mut self, action: usize) -> Result<Transition, EnvError>;

    fn observe(&self) -> Obs;

    fn snapshot(&self) -> StateSnapshot;

    fn restore(&mut self, snap: &StateSnapshot) -> Result<(), EnvError>;

    /// Draws a TP from the env's native initial distribution with settings
    /// from the declared randomization ranges. Never yields an
    /// already-successful start state.
    fn sample_target_tp(&self, mode: SampleMode, rng: &mut dyn RngCore) -> TaskParams;

    /// Scripted controller action for the current state.
    fn oracle_action(&self, style: OracleStyle, rng: &mut dyn RngCore) -> Result<usize, EnvError>;

    /// Spatial one-hot rendering of the current state (the student's view).
    fn render_obs(&self) -> Vec<f64>;

    fn render_dim(&self) -> usize;

    fn episode_finished(&self) -> bool;
}

/// Guards restore against kind/schema mismatch.
pub fn check_snapshot_compat(env: &dyn Env, snap: &StateSnapshot) -> Result<(), EnvError> {
    if snap.env_kind != env.kind() || snap.schema_version != env.schema_version() {
        return Err(EnvError::SnapshotIncompatible {
            expected_kind: env.kind().to_string(),
            expected_version: env.schema_version(),
            got_kind: snap.env_kind.clone(),
            got_version: snap.schema_version,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_validation() {
        let mut s = EnvSettings::nominal(10);
        assert!(s.validate().is_ok());
        s.slip_probability = 1.2;
        assert!(matches!(s.validate(), Err(EnvError::InvalidSettings(_))));
        s.slip_probability = 0.5;
        s.episode_step_limit = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn reward_once_and_truncation() {
        let mut core = EpisodeCore::default();
        core.begin(EnvSettings::nominal(3), None, None, 1);
        assert_eq!(core.conclude_step(false), (0, false, false));
        assert_eq!(core.conclude_step(false), (0, false, false));
        // limit hit without success: truncated, not terminal
        assert_eq!(core.conclude_step(false), (0, false, true));
        assert!(core.finished);
        assert!(core.ensure_active().is_err());
    }

    #[test]
    fn success_terminates() {
        let mut core = EpisodeCore::default();
        core.begin(EnvSettings::nominal(10), None, None, 1);
        assert_eq!(core.conclude_step(true), (1, true, false));
        assert!(core.finished);
    }

    #[test]
    fn core_codec_round_trip_preserves_rng() {
        let mut core = EpisodeCore::default();
        core.begin(EnvSettings::nominal(10), Some(GoalSpec(3)), Some(Difficulty::Hard), 99);
        // advance the rng so word_pos is nontrivial
        let _ = core.rng.gen::<f64>();
        let mut w = ByteWriter::new();
        core.encode(&mut w);
        let bytes = w.into_bytes();
        let mut restored = EpisodeCore::decode(&mut ByteReader::new(&bytes)).unwrap();
        assert_eq!(restored.settings, core.settings);
        assert_eq!(restored.goal, core.goal);
        assert_eq!(restored.difficulty, core.difficulty);
        // identical future draws
        assert_eq!(restored.rng.gen::<u64>(), core.rng.gen::<u64>());
    }

    #[test]
    fn tp_provenance_consistency() {
        let tp = TaskParams {
            start: StartState::TargetDraw { seed: 1 },
            settings: EnvSettings::nominal(5),
            goal: None,
            provenance: Provenance::Demo {
                demo_id: "d".into(),
                step_index: 0,
                chunk_index: 0,
            },
            difficulty: None,
        };
        assert!(tp.validate().is_err());
    }
}
