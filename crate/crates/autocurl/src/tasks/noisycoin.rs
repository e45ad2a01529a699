//! One-step stochastic env: success with probability q regardless of the
//! action. Exercises filter behavior under environment stochasticity.

use crate::codec::{ByteReader, ByteWriter};
use crate::env::{
    check_snapshot_compat, Env, EnvError, EpisodeCore, Obs, OracleStyle, RandomizationRanges,
    SampleMode, StartState, StateSnapshot, TaskParams, Transition,
};
use crate::tasks::EnvParams;
use rand::Rng;
use rand_chacha::rand_core::RngCore;

pub struct NoisyCoin {
    q: f64,
    core: EpisodeCore,
}

impl NoisyCoin {
    pub fn new(params: &EnvParams) -> Self {
        Self {
            q: params.coin_q.clamp(0.0, 1.0),
            core: EpisodeCore::default(),
        }
    }
}

impl Env for NoisyCoin {
    fn kind(&self) -> &'static str {
        "noisycoin"
    }

    fn action_count(&self) -> usize {
        2
    }

    fn randomization(&self) -> RandomizationRanges {
        RandomizationRanges {
            slip: (0.0, 0.0),
            perturbation_rate: (0.0, 0.0),
            perturbation_magnitude: 0,
            episode_step_limit: 1,
        }
    }

    fn reset_with(&mut self, tp: &TaskParams, rng: &mut dyn RngCore) -> Result<Obs, EnvError> {
        tp.validate()?;
        if tp.goal.is_some() {
            return Err(EnvError::GoalInvalid("noisycoin is not goal-conditioned".into()));
        }
        if let StartState::DemoState(snap) = &tp.start {
            self.restore(snap)?;
        }
        self.core
            .begin(tp.settings.clone(), None, None, rng.next_u64());
        Ok(self.observe())
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.ensure_active()?;
        if action >= 2 {
            return Err(EnvError::InvalidAction {
                kind: "noisycoin",
                action,
                count: 2,
            });
        }
        let observation = self.observe();
        let success = self.core.rng.gen::<f64>() < self.q;
        let (reward, terminal, truncated) = self.core.conclude_step(success);
        Ok(Transition {
            observation,
            action,
            reward,
            terminal,
            truncated,
            next_observation: self.observe(),
        })
    }

    fn observe(&self) -> Obs {
        vec![0]
    }

    fn snapshot(&self) -> StateSnapshot {
        let mut w = ByteWriter::new();
        self.core.encode(&mut w);
        StateSnapshot {
            env_kind: self.kind().to_string(),
            schema_version: self.schema_version(),
            payload: w.into_bytes(),
        }
    }

    fn restore(&mut self, snap: &StateSnapshot) -> Result<(), EnvError> {
        check_snapshot_compat(self, snap)?;
        let mut r = ByteReader::new(&snap.payload);
        self.core = EpisodeCore::decode(&mut r)?;
        r.expect_end()?;
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

    fn oracle_action(&self, _style: OracleStyle, _rng: &mut dyn RngCore) -> Result<usize, EnvError> {
        Ok(0)
    }

    fn render_obs(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn render_dim(&self) -> usize {
        1
    }

    fn episode_finished(&self) -> bool {
        self.core.finished
    }
}
