//! Lift-and-hold: grasp the object and keep it at or above the threshold row
//! for H consecutive steps. The hold counter resets on any drop or dip.

use crate::codec::{ByteReader, ByteWriter};
use crate::env::{
    check_snapshot_compat, Env, EnvError, EpisodeCore, Obs, OracleStyle, Provenance,
    RandomizationRanges, SampleMode, StartState, StateSnapshot, TaskParams, Transition,
};
use crate::tasks::grid::{sgn, GridCore, ACT_GRASP, ACT_UP};
use crate::tasks::EnvParams;
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACT_STAY: usize = 6;
const ACTION_COUNT: usize = 7;
const DEFAULT_STEP_LIMIT: u32 = 80;

pub struct LiftHold {
    grid: GridCore,
    hold_counter: u32,
    hold_steps: u32,
    threshold_row: i64,
    core: EpisodeCore,
    slip_range: (f64, f64),
    perturbation_rate_range: (f64, f64),
    perturbation_magnitude: i64,
    step_limit: u32,
}

impl LiftHold {
    pub fn new(params: &EnvParams) -> Self {
        Self {
            grid: GridCore::new(params.grid_w.max(2), params.grid_h.max(2)),
            hold_counter: 0,
            hold_steps: params.hold_steps.max(1),
            threshold_row: params.threshold_row.clamp(0, params.grid_h - 1),
            core: EpisodeCore::default(),
            slip_range: params.slip_range,
            perturbation_rate_range: params.perturbation_rate_range,
            perturbation_magnitude: params.perturbation_magnitude,
            step_limit: params.step_limit_or(DEFAULT_STEP_LIMIT),
        }
    }

    fn above(&self) -> bool {
        self.grid.obj.1 <= self.threshold_row
    }

    fn success(&self) -> bool {
        self.hold_counter >= self.hold_steps
    }

    pub fn hold_counter(&self) -> u32 {
        self.hold_counter
    }
}

impl Env for LiftHold {
    fn kind(&self) -> &'static str {
        "lifthold"
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn randomization(&self) -> RandomizationRanges {
        RandomizationRanges {
            slip: self.slip_range,
            perturbation_rate: self.perturbation_rate_range,
            perturbation_magnitude: self.perturbation_magnitude,
            episode_step_limit: self.step_limit,
        }
    }

    fn reset_with(&mut self, tp: &TaskParams, rng: &mut dyn RngCore) -> Result<Obs, EnvError> {
        tp.validate()?;
        if tp.goal.is_some() {
            return Err(EnvError::GoalInvalid("lifthold is not goal-conditioned".into()));
        }
        match &tp.start {
            StartState::TargetDraw { seed } => {
                let mut draw = ChaCha8Rng::seed_from_u64(*seed);
                self.grid.agent = (
                    draw.gen_range(0..self.grid.w),
                    draw.gen_range(0..self.grid.h),
                );
                // object starts below the threshold so no start is successful
                self.grid.obj = (
                    draw.gen_range(0..self.grid.w),
                    draw.gen_range((self.threshold_row + 1).min(self.grid.h - 1)..self.grid.h),
                );
                self.grid.held = false;
                self.hold_counter = 0;
            }
            StartState::DemoState(snap) => self.restore(snap)?,
        }
        self.core
            .begin(tp.settings.clone(), None, None, rng.next_u64());
        Ok(self.observe())
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.ensure_active()?;
        if action >= ACTION_COUNT {
            return Err(EnvError::InvalidAction {
                kind: "lifthold",
                action,
                count: ACTION_COUNT,
            });
        }
        let observation = self.observe();
        let executed = self.core.maybe_slip(action, ACTION_COUNT);
        if executed != ACT_STAY {
            self.grid.apply_common(executed);
        }
        self.grid.apply_perturbation(&mut self.core);
        if self.grid.held && self.above() {
            self.hold_counter += 1;
        } else {
            self.hold_counter = 0;
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
        vec![
            sgn(self.grid.obj.0 - self.grid.agent.0),
            sgn(self.grid.obj.1 - self.grid.agent.1),
            self.grid.held as i64,
            sgn(self.grid.obj.1 - self.threshold_row),
            self.hold_counter as i64,
        ]
    }

    fn snapshot(&self) -> StateSnapshot {
        let mut w = ByteWriter::new();
        self.core.encode(&mut w);
        self.grid.encode(&mut w);
        w.put_u32(self.hold_counter);
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
        self.grid.decode(&mut r)?;
        self.hold_counter = r.get_u32()?;
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
            provenance: Provenance::Target,
            difficulty: None,
        }
    }

    fn oracle_action(&self, style: OracleStyle, rng: &mut dyn RngCore) -> Result<usize, EnvError> {
        if let OracleStyle::Suboptimal { detour_rate } = style {
            if rng.gen::<f64>() < detour_rate {
                return Ok(rng.gen_range(0..4));
            }
        }
        if !self.grid.held {
            return Ok(self
                .grid
                .step_toward(self.grid.agent, self.grid.obj)
                .unwrap_or(ACT_GRASP));
        }
        if !self.above() {
            return Ok(ACT_UP);
        }
        match style {
            // lifts but never holds: drops the object as soon as it is up
            OracleStyle::Partial => Ok(crate::tasks::grid::ACT_RELEASE),
            _ => Ok(ACT_STAY),
        }
    }

    fn render_obs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.render_dim());
        self.grid.render_planes(&mut v);
        v.push(self.grid.held as u8 as f64);
        v.push(self.hold_counter as f64 / self.hold_steps as f64);
        v
    }

    fn render_dim(&self) -> usize {
        2 * (self.grid.w * self.grid.h) as usize + 2
    }

    fn episode_finished(&self) -> bool {
        self.core.finished
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvSettings, SampleMode};

    fn fresh() -> (LiftHold, ChaCha8Rng) {
        (LiftHold::new(&EnvParams::default()), ChaCha8Rng::seed_from_u64(5))
    }

    fn nominal_tp(env: &LiftHold, rng: &mut ChaCha8Rng) -> TaskParams {
        let mut tp = env.sample_target_tp(SampleMode::Training, rng);
        tp.settings = EnvSettings::nominal(80);
        tp
    }

    #[test]
    fn oracle_lifts_and_holds_to_success() {
        let (mut env, mut rng) = fresh();
        let tp = nominal_tp(&env, &mut rng);
        env.reset_with(&tp, &mut rng).unwrap();
        let mut reward = 0;
        for _ in 0..80 {
            let a = env.oracle_action(OracleStyle::Optimal, &mut rng).unwrap();
            let t = env.step(a).unwrap();
            reward = t.reward;
            if t.terminal || t.truncated {
                break;
            }
        }
        assert_eq!(reward, 1);
    }

    #[test]
    fn hold_must_be_consecutive() {
        let (mut env, mut rng) = fresh();
        let tp = nominal_tp(&env, &mut rng);
        env.reset_with(&tp, &mut rng).unwrap();
        // drive to holding position
        loop {
            let a = env.oracle_action(OracleStyle::Optimal, &mut rng).unwrap();
            if a == ACT_STAY {
                break;
            }
            env.step(a).unwrap();
        }
        while env.hold_counter() < 9 {
            let t = env.step(ACT_STAY).unwrap();
            assert_eq!(t.reward, 0);
        }
        // dropping resets the counter
        env.step(crate::tasks::grid::ACT_RELEASE).unwrap();
        assert_eq!(env.hold_counter(), 0);
        // re-grasp and hold again: the full H consecutive steps are required
        let mut steps = 0;
        env.step(ACT_GRASP).unwrap();
        steps += 1;
        loop {
            let t = env.step(ACT_STAY).unwrap();
            steps += 1;
            if t.reward == 1 {
                break;
            }
        }
        assert_eq!(steps, 10);
    }

    #[test]
    fn partial_oracle_never_succeeds() {
        let (mut env, mut rng) = fresh();
        let tp = nominal_tp(&env, &mut rng);
        env.reset_with(&tp, &mut rng).unwrap();
        for _ in 0..80 {
            let a = env.oracle_action(OracleStyle::Partial, &mut rng).unwrap();
            let t = env.step(a).unwrap();
            assert_eq!(t.reward, 0);
            if t.terminal || t.truncated {
                assert!(t.truncated);
                break;
            }
        }
    }

    #[test]
    fn target_starts_are_never_successful() {
        let (env, mut rng) = fresh();
        let mut probe = LiftHold::new(&EnvParams::default());
        for _ in 0..200 {
            let tp = env.sample_target_tp(SampleMode::Training, &mut rng);
            probe.reset_with(&tp, &mut rng).unwrap();
            assert!(!probe.success());
        }
    }
}
