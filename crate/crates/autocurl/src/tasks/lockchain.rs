//! Combination-lock chain: a length-N secret action sequence must be entered
//! in order; any wrong action resets progress to zero. A hard-exploration
//! witness — uniform random play succeeds with probability (1/A)^N.

use crate::codec::{ByteReader, ByteWriter};
use crate::env::{
    check_snapshot_compat, Env, EnvError, EpisodeCore, Obs, OracleStyle, RandomizationRanges,
    SampleMode, StartState, StateSnapshot, TaskParams, Transition,
};
use crate::tasks::EnvParams;
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEFAULT_STEP_LIMIT: u32 = 300;

pub struct LockChain {
    n: usize,
    actions: usize,
    combo: Vec<usize>,
    pos: usize,
    core: EpisodeCore,
    slip_range: (f64, f64),
    step_limit: u32,
}

impl LockChain {
    pub fn new(params: &EnvParams) -> Self {
        let n = params.chain_length.max(1);
        let actions = params.chain_actions.max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(params.combination_seed);
        let combo = (0..n).map(|_| rng.gen_range(0..actions)).collect();
        Self {
            n,
            actions,
            combo,
            pos: 0,
            core: EpisodeCore::default(),
            slip_range: params.slip_range,
            step_limit: params.step_limit_or(DEFAULT_STEP_LIMIT),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn combination(&self) -> &[usize] {
        &self.combo
    }

    fn success(&self) -> bool {
        self.pos == self.n
    }
}

impl Env for LockChain {
    fn kind(&self) -> &'static str {
        "lockchain"
    }

    fn action_count(&self) -> usize {
        self.actions
    }

    fn randomization(&self) -> RandomizationRanges {
        RandomizationRanges {
            slip: self.slip_range,
            perturbation_rate: (0.0, 0.0),
            perturbation_magnitude: 0,
            episode_step_limit: self.step_limit,
        }
    }

    fn reset_with(&mut self, tp: &TaskParams, rng: &mut dyn RngCore) -> Result<Obs, EnvError> {
        tp.validate()?;
        if tp.goal.is_some() {
            return Err(EnvError::GoalInvalid("lockchain is not goal-conditioned".into()));
        }
        match &tp.start {
            StartState::TargetDraw { .. } => self.pos = 0,
            StartState::DemoState(snap) => self.restore(snap)?,
        }
        self.core
            .begin(tp.settings.clone(), None, None, rng.next_u64());
        Ok(self.observe())
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.ensure_active()?;
        if action >= self.actions {
            return Err(EnvError::InvalidAction {
                kind: "lockchain",
                action,
                count: self.actions,
            });
        }
        let observation = self.observe();
        let executed = self.core.maybe_slip(action, self.actions);
        if self.pos < self.n {
            if executed == self.combo[self.pos] {
                self.pos += 1;
            } else {
                self.pos = 0;
            }
        }
        let (reward, terminal, truncated) = self.core.conclude_step(self.success());
        Ok(Transition {
            observation,
            action: executed,
            reward,
            terminal,
            truncated,
            next_observation: self.observe(),
        })
    }

    fn observe(&self) -> Obs {
        vec![self.pos as i64]
    }

    fn snapshot(&self) -> StateSnapshot {
        let mut w = ByteWriter::new();
        self.core.encode(&mut w);
        w.put_u32(self.pos as u32);
        w.put_u32(self.n as u32);
        for &c in &self.combo {
            w.put_u32(c as u32);
        }
        StateSnapshot {
            env_kind: self.kind().to_string(),
            schema_version: self.schema_version(),
            payload: w.into_bytes(),
        }
    }

    fn restore(&mut self, snap: &StateSnapshot) -> Result<(), EnvError> {
        check_snapshot_compat(self, snap)?;
        let mut r = ByteReader::new(&snap.payload);
        let core = EpisodeCore::decode(&mut r)?;
        let pos = r.get_u32()? as usize;
        let n = r.get_u32()? as usize;
        if n != self.n {
            return Err(EnvError::SnapshotIncompatible {
                expected_kind: "lockchain".into(),
                expected_version: self.schema_version(),
                got_kind: format!("lockchain[n={n}]"),
                got_version: snap.schema_version,
            });
        }
        let mut combo = Vec::with_capacity(n);
        for _ in 0..n {
            combo.push(r.get_u32()? as usize);
        }
        r.expect_end()?;
        self.core = core;
        self.pos = pos;
        self.combo = combo;
        Ok(())
    }

    fn sample_target_tp(&self, _mode: SampleMode, rng: &mut dyn RngCore) -> TaskParams {
        TaskParams {
            start: StartState::TargetDraw {
                seed: rng.next_u64(),
            },
            settings: self.randomization().sample(rng),
            goal: None,
            provenance: crate::env::Provenance::Target,
            difficulty: None,
        }
    }

    fn oracle_action(&self, style: OracleStyle, rng: &mut dyn RngCore) -> Result<usize, EnvError> {
        if self.pos >= self.n {
            return Ok(0);
        }
        let correct = self.combo[self.pos];
        let wrong = (correct + 1) % self.actions;
        match style {
            OracleStyle::Optimal => Ok(correct),
            OracleStyle::Suboptimal { detour_rate } => {
                if rng.gen::<f64>() < detour_rate {
                    Ok(wrong)
                } else {
                    Ok(correct)
                }
            }
            // knows only the first half of the combination
            OracleStyle::Partial => {
                if self.pos < self.n / 2 {
                    Ok(correct)
                } else {
                    Ok(wrong)
                }
            }
        }
    }

    fn render_obs(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n + 1];
        v[self.pos] = 1.0;
        v
    }

    fn render_dim(&self) -> usize {
        self.n + 1
    }

    fn episode_finished(&self) -> bool {
        self.core.finished
    }
}
