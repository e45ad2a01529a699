//! Nut-and-bolt threading with difficulty mixing: easy succeeds once the nut
//! reaches the bolt cell, hard additionally requires R turn actions there.
//! Training draws difficulty easy with 50% probability; evaluation is always
//! hard.

use crate::codec::{ByteReader, ByteWriter};
use crate::env::{
    check_snapshot_compat, Difficulty, Env, EnvError, EpisodeCore, Obs, OracleStyle, Provenance,
    RandomizationRanges, SampleMode, StartState, StateSnapshot, TaskParams, Transition,
};
use crate::tasks::grid::{sgn, GridCore, ACT_GRASP};
use crate::tasks::EnvParams;
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ACT_TURN: usize = 6;
const ACTION_COUNT: usize = 7;
const DEFAULT_STEP_LIMIT: u32 = 80;

pub struct ThreadTask {
    grid: GridCore,
    turns: u32,
    turns_required: u32,
    bolt: (i64, i64),
    core: EpisodeCore,
    slip_range: (f64, f64),
    perturbation_rate_range: (f64, f64),
    perturbation_magnitude: i64,
    step_limit: u32,
}

impl ThreadTask {
    pub fn new(params: &EnvParams) -> Self {
        let w = params.grid_w.max(2);
        let h = params.grid_h.max(2);
        Self {
            grid: GridCore::new(w, h),
            turns: 0,
            turns_required: params.turns_required.max(1),
            bolt: (w / 2, h / 2),
            core: EpisodeCore::default(),
            slip_range: params.slip_range,
            perturbation_rate_range: params.perturbation_rate_range,
            perturbation_magnitude: params.perturbation_magnitude,
            step_limit: params.step_limit_or(DEFAULT_STEP_LIMIT),
        }
    }

    pub fn turns_done(&self) -> u32 {
        self.turns
    }

    fn on_bolt(&self) -> bool {
        self.grid.obj == self.bolt
    }

    fn success(&self) -> bool {
        match self.core.difficulty.unwrap_or(Difficulty::Hard) {
            Difficulty::Easy => self.on_bolt(),
            Difficulty::Hard => self.on_bolt() && self.turns >= self.turns_required,
        }
    }

    fn start_from_seed(&self, seed: u64) -> ((i64, i64), (i64, i64)) {
        let mut draw = ChaCha8Rng::seed_from_u64(seed);
        let agent = (
            draw.gen_range(0..self.grid.w),
            draw.gen_range(0..self.grid.h),
        );
        // the nut never starts on the bolt, so no start state is successful
        let obj = loop {
            let c = (
                draw.gen_range(0..self.grid.w),
                draw.gen_range(0..self.grid.h),
            );
            if c != self.bolt {
                break c;
            }
        };
        (agent, obj)
    }
}

impl Env for ThreadTask {
    fn kind(&self) -> &'static str {
        "thread"
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn supports_difficulty(&self) -> bool {
        true
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
            return Err(EnvError::GoalInvalid("thread is not goal-conditioned".into()));
        }
        match &tp.start {
            StartState::TargetDraw { seed } => {
                let (agent, obj) = self.start_from_seed(*seed);
                self.grid.agent = agent;
                self.grid.obj = obj;
                self.grid.held = false;
                self.turns = 0;
            }
            StartState::DemoState(snap) => self.restore(snap)?,
        }
        let difficulty = tp.difficulty.unwrap_or(Difficulty::Hard);
        self.core
            .begin(tp.settings.clone(), None, Some(difficulty), rng.next_u64());
        Ok(self.observe())
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.ensure_active()?;
        if action >= ACTION_COUNT {
            return Err(EnvError::InvalidAction {
                kind: "thread",
                action,
                count: ACTION_COUNT,
            });
        }
        let observation = self.observe();
        let executed = self.core.maybe_slip(action, ACTION_COUNT);
        if executed == ACT_TURN {
            if self.grid.held && self.on_bolt() {
                self.turns = (self.turns + 1).min(self.turns_required);
            }
        } else {
            self.grid.apply_common(executed);
        }
        self.grid.apply_perturbation(&mut self.core);
        // moving the nut off the bolt unscrews it
        if !self.on_bolt() {
            self.turns = 0;
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
        let difficulty = match self.core.difficulty.unwrap_or(Difficulty::Hard) {
            Difficulty::Easy => 0,
            Difficulty::Hard => 1,
        };
        vec![
            sgn(self.grid.obj.0 - self.grid.agent.0),
            sgn(self.grid.obj.1 - self.grid.agent.1),
            self.grid.held as i64,
            sgn(self.bolt.0 - self.grid.obj.0),
            sgn(self.bolt.1 - self.grid.obj.1),
            self.turns as i64,
            difficulty,
        ]
    }

    fn snapshot(&self) -> StateSnapshot {
        let mut w = ByteWriter::new();
        self.core.encode(&mut w);
        self.grid.encode(&mut w);
        w.put_u32(self.turns);
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
        self.turns = r.get_u32()?;
        r.expect_end()?;
        Ok(())
    }

    fn sample_target_tp(&self, mode: SampleMode, rng: &mut dyn RngCore) -> TaskParams {
        let difficulty = match mode {
            // easy with a 50% chance during training
            SampleMode::Training => {
                if rng.gen::<f64>() < 0.5 {
                    Difficulty::Easy
                } else {
                    Difficulty::Hard
                }
            }
            SampleMode::Evaluation => Difficulty::Hard,
        };
        TaskParams {
            start: StartState::TargetDraw {
                seed: rng.next_u64(),
            },
            settings: self.randomization().sample(rng),
            goal: None,
            provenance: Provenance::Target,
            difficulty: Some(difficulty),
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
        if !self.on_bolt() {
            return Ok(self
                .grid
                .step_toward(self.grid.agent, self.bolt)
                .unwrap_or(ACT_TURN));
        }
        match style {
            // carries the nut to the bolt but never screws it down
            OracleStyle::Partial => Ok(crate::tasks::grid::ACT_RELEASE),
            _ => Ok(ACT_TURN),
        }
    }

    fn render_obs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.render_dim());
        self.grid.render_planes(&mut v);
        v.push(self.grid.held as u8 as f64);
        v.push(self.turns as f64 / self.turns_required as f64);
        let hard = matches!(
            self.core.difficulty.unwrap_or(Difficulty::Hard),
            Difficulty::Hard
        );
        v.push(hard as u8 as f64);
        v
    }

    fn render_dim(&self) -> usize {
        2 * (self.grid.w * self.grid.h) as usize + 3
    }

    fn episode_finished(&self) -> bool {
        self.core.finished
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSettings;

    fn nominal_tp(env: &ThreadTask, mode: SampleMode, rng: &mut ChaCha8Rng) -> TaskParams {
        let mut tp = env.sample_target_tp(mode, rng);
        tp.settings = EnvSettings::nominal(80);
        tp
    }

    fn run_oracle(env: &mut ThreadTask, style: OracleStyle, rng: &mut ChaCha8Rng) -> (bool, u32) {
        let mut steps = 0;
        loop {
            let a = env.oracle_action(style, rng).unwrap();
            let t = env.step(a).unwrap();
            steps += 1;
            if t.terminal || t.truncated {
                return (t.reward == 1, steps);
            }
        }
    }

    #[test]
    fn easy_succeeds_on_arrival_hard_needs_turns() {
        let mut env = ThreadTask::new(&EnvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // easy mode: success the moment the nut reaches the bolt, zero turns
        let mut tp = nominal_tp(&env, SampleMode::Training, &mut rng);
        tp.difficulty = Some(Difficulty::Easy);
        env.reset_with(&tp, &mut rng).unwrap();
        let (ok, _) = run_oracle(&mut env, OracleStyle::Optimal, &mut rng);
        assert!(ok);
        assert_eq!(env.turns_done(), 0);

        // hard mode from the same start: exactly R more turn steps
        let mut tp_hard = tp.clone();
        tp_hard.difficulty = Some(Difficulty::Hard);
        env.reset_with(&tp_hard, &mut rng).unwrap();
        let (ok, _) = run_oracle(&mut env, OracleStyle::Optimal, &mut rng);
        assert!(ok);
        assert_eq!(env.turns_done(), 4);
    }

    #[test]
    fn moving_off_bolt_resets_turns() {
        let mut env = ThreadTask::new(&EnvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tp = nominal_tp(&env, SampleMode::Training, &mut rng);
        tp.difficulty = Some(Difficulty::Hard);
        env.reset_with(&tp, &mut rng).unwrap();
        // drive to the bolt
        loop {
            let a = env.oracle_action(OracleStyle::Optimal, &mut rng).unwrap();
            if a == ACT_TURN {
                break;
            }
            env.step(a).unwrap();
        }
        env.step(ACT_TURN).unwrap();
        env.step(ACT_TURN).unwrap();
        assert_eq!(env.turns_done(), 2);
        env.step(crate::tasks::grid::ACT_RIGHT).unwrap();
        assert_eq!(env.turns_done(), 0);
    }

    #[test]
    fn evaluation_mode_is_always_hard() {
        let env = ThreadTask::new(&EnvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let tp = env.sample_target_tp(SampleMode::Evaluation, &mut rng);
            assert_eq!(tp.difficulty, Some(Difficulty::Hard));
        }
    }

    #[test]
    fn training_mode_mixes_difficulty() {
        let env = ThreadTask::new(&EnvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let easy = (0..10_000)
            .filter(|_| {
                matches!(
                    env.sample_target_tp(SampleMode::Training, &mut rng).difficulty,
                    Some(Difficulty::Easy)
                )
            })
            .count();
        let rate = easy as f64 / 10_000.0;
        assert!((rate - 0.5).abs() < 0.02, "easy rate {rate}");
    }

    #[test]
    fn partial_oracle_fails_hard_mode() {
        let mut env = ThreadTask::new(&EnvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tp = nominal_tp(&env, SampleMode::Training, &mut rng);
        tp.difficulty = Some(Difficulty::Hard);
        env.reset_with(&tp, &mut rng).unwrap();
        let (ok, _) = run_oracle(&mut env, OracleStyle::Partial, &mut rng);
        assert!(!ok);
    }
}
