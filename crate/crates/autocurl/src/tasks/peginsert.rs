//! Peg insertion: carry the object to the socket cell, orient it upright
//! (theta = 0), and commit with an explicit insert action.

use crate::codec::{ByteReader, ByteWriter};
use crate::env::{
    check_snapshot_compat, Env, EnvError, EpisodeCore, Obs, OracleStyle, Provenance,
    RandomizationRanges, SampleMode, StartState, StateSnapshot, TaskParams, Transition,
};
use crate::tasks::grid::{sgn, GridCore, ACT_GRASP, ACT_RELEASE};
use crate::tasks::EnvParams;
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ACT_ROTATE: usize = 6;
pub const ACT_INSERT: usize = 7;
const ACTION_COUNT: usize = 8;
const DEFAULT_STEP_LIMIT: u32 = 80;

pub struct PegInsert {
    grid: GridCore,
    /// Object orientation in quarter turns; 0 is upright.
    theta: u8,
    inserted: bool,
    /// Orientation at episode start; drives the partial (section-only) oracle.
    initial_theta: u8,
    socket: (i64, i64),
    core: EpisodeCore,
    slip_range: (f64, f64),
    perturbation_rate_range: (f64, f64),
    perturbation_magnitude: i64,
    step_limit: u32,
}

impl PegInsert {
    pub fn new(params: &EnvParams) -> Self {
        let w = params.grid_w.max(2);
        let h = params.grid_h.max(2);
        Self {
            grid: GridCore::new(w, h),
            theta: 0,
            inserted: false,
            initial_theta: 0,
            socket: (w - 2, h - 2),
            core: EpisodeCore::default(),
            slip_range: params.slip_range,
            perturbation_rate_range: params.perturbation_rate_range,
            perturbation_magnitude: params.perturbation_magnitude,
            step_limit: params.step_limit_or(DEFAULT_STEP_LIMIT),
        }
    }

    fn success(&self) -> bool {
        self.inserted && self.grid.obj == self.socket && self.theta == 0
    }

    pub fn theta(&self) -> u8 {
        self.theta
    }

    pub fn socket(&self) -> (i64, i64) {
        self.socket
    }
}

impl Env for PegInsert {
    fn kind(&self) -> &'static str {
        "peginsert"
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
            return Err(EnvError::GoalInvalid("peginsert is not goal-conditioned".into()));
        }
        match &tp.start {
            StartState::TargetDraw { seed } => {
                let mut draw = ChaCha8Rng::seed_from_u64(*seed);
                self.grid.agent = (
                    draw.gen_range(0..self.grid.w),
                    draw.gen_range(0..self.grid.h),
                );
                self.grid.obj = (
                    draw.gen_range(0..self.grid.w),
                    draw.gen_range(0..self.grid.h),
                );
                self.grid.held = false;
                self.theta = draw.gen_range(0..4);
                self.inserted = false;
            }
            StartState::DemoState(snap) => self.restore(snap)?,
        }
        self.initial_theta = self.theta;
        self.core
            .begin(tp.settings.clone(), None, None, rng.next_u64());
        Ok(self.observe())
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.ensure_active()?;
        if action >= ACTION_COUNT {
            return Err(EnvError::InvalidAction {
                kind: "peginsert",
                action,
                count: ACTION_COUNT,
            });
        }
        let observation = self.observe();
        let executed = self.core.maybe_slip(action, ACTION_COUNT);
        match executed {
            ACT_ROTATE => {
                if self.grid.held {
                    self.theta = (self.theta + 1) % 4;
                }
            }
            ACT_INSERT => {
                if self.grid.held && self.grid.obj == self.socket && self.theta == 0 {
                    self.inserted = true;
                }
            }
            other => {
                self.grid.apply_common(other);
            }
        }
        if !self.inserted {
            self.grid.apply_perturbation(&mut self.core);
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
            self.theta as i64,
            sgn(self.socket.0 - self.grid.obj.0),
            sgn(self.socket.1 - self.grid.obj.1),
        ]
    }

    fn snapshot(&self) -> StateSnapshot {
        let mut w = ByteWriter::new();
        self.core.encode(&mut w);
        self.grid.encode(&mut w);
        w.put_u8(self.theta);
        w.put_bool(self.inserted);
        w.put_u8(self.initial_theta);
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
        self.theta = r.get_u8()?;
        self.inserted = r.get_bool()?;
        self.initial_theta = r.get_u8()?;
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
        let partial = matches!(style, OracleStyle::Partial);
        // partial oracle from a flipped start: reorient only, then idle
        if partial && self.initial_theta != 0 {
            if self.theta != 0 {
                if !self.grid.held {
                    return Ok(self
                        .grid
                        .step_toward(self.grid.agent, self.grid.obj)
                        .unwrap_or(ACT_GRASP));
                }
                return Ok(ACT_ROTATE);
            }
            return Ok(ACT_RELEASE);
        }
        // partial oracle from an upright start never rotates; with theta == 0
        // already, the optimal path below does not rotate either
        if !self.grid.held {
            return Ok(self
                .grid
                .step_toward(self.grid.agent, self.grid.obj)
                .unwrap_or(ACT_GRASP));
        }
        if self.theta != 0 {
            if partial {
                // flipped mid-episode (perturbation/slip); section oracle gives up
                return Ok(ACT_RELEASE);
            }
            return Ok(ACT_ROTATE);
        }
        if self.grid.obj != self.socket {
            return Ok(self
                .grid
                .step_toward(self.grid.agent, self.socket)
                .unwrap_or(ACT_INSERT));
        }
        Ok(ACT_INSERT)
    }

    fn render_obs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.render_dim());
        self.grid.render_planes(&mut v);
        let n = (self.grid.w * self.grid.h) as usize;
        let mut socket = vec![0.0; n];
        socket[(self.socket.1 * self.grid.w + self.socket.0) as usize] = 1.0;
        v.extend_from_slice(&socket);
        for t in 0..4 {
            v.push((self.theta == t) as u8 as f64);
        }
        v.push(self.grid.held as u8 as f64);
        v
    }

    fn render_dim(&self) -> usize {
        3 * (self.grid.w * self.grid.h) as usize + 5
    }

    fn episode_finished(&self) -> bool {
        self.core.finished
    }
}
