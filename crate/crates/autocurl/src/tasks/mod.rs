//! Built-in sparse-reward environments and their scripted controllers.
//!
//! Five task analogs each isolate one reward mechanism: exploration depth
//! (lockchain), hold duration (lifthold), precision plus orientation
//! (peginsert), goal conditioning (facegoal), and difficulty mixing (thread).
//! `noisycoin` is a one-step stochastic env for filter-rate checks.

mod facegoal;
mod grid;
mod lifthold;
mod lockchain;
mod noisycoin;
mod peginsert;
mod thread_task;

pub use facegoal::FaceGoal;
pub use grid::{die_roll, DieOrientation, GridCore};
pub use lifthold::LiftHold;
pub use lockchain::LockChain;
pub use noisycoin::NoisyCoin;
pub use peginsert::PegInsert;
pub use thread_task::ThreadTask;

use crate::env::Env;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_KINDS: &[&str] = &[
    "lockchain",
    "lifthold",
    "peginsert",
    "facegoal",
    "thread",
    "noisycoin",
];

#[derive(Debug, Error)]
#[error("unknown env kind {0:?} (known: {ENV_KINDS:?})")]
pub struct UnknownEnvKind(pub String);

/// Environment parameters; unset fields fall back to the documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    /// lockchain: chain length N.
    pub chain_length: usize,
    /// lockchain: action-set size A.
    pub chain_actions: usize,
    /// lockchain: seed fixing the secret combination.
    pub combination_seed: u64,
    pub grid_w: i64,
    pub grid_h: i64,
    /// lifthold: consecutive hold steps H required.
    pub hold_steps: u32,
    /// lifthold: rows at or above this index count as lifted.
    pub threshold_row: i64,
    /// thread: turns R required in hard mode.
    pub turns_required: u32,
    /// facegoal: success radius c around the grid center (Chebyshev).
    pub center_radius: i64,
    /// noisycoin: per-episode success probability q.
    pub coin_q: f64,
    /// Episode step limit; 0 means the env default.
    pub step_limit: u32,
    pub slip_range: (f64, f64),
    pub perturbation_rate_range: (f64, f64),
    pub perturbation_magnitude: i64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            chain_length: 20,
            chain_actions: 4,
            combination_seed: 7,
            grid_w: 9,
            grid_h: 9,
            hold_steps: 10,
            threshold_row: 2,
            turns_required: 4,
            center_radius: 2,
            coin_q: 0.5,
            step_limit: 0,
            slip_range: (0.0, 0.1),
            perturbation_rate_range: (0.0, 0.2),
            perturbation_magnitude: 1,
        }
    }
}

impl EnvParams {
    pub fn step_limit_or(&self, default: u32) -> u32 {
        if self.step_limit == 0 {
            default
        } else {
            self.step_limit
        }
    }
}

/// Env registry keyed by kind string.
pub fn make_env(kind: &str, params: &EnvParams) -> Result<Box<dyn Env>, UnknownEnvKind> {
    match kind {
        "lockchain" => Ok(Box::new(LockChain::new(params))),
        "lifthold" => Ok(Box::new(LiftHold::new(params))),
        "peginsert" => Ok(Box::new(PegInsert::new(params))),
        "facegoal" => Ok(Box::new(FaceGoal::new(params))),
        "thread" => Ok(Box::new(ThreadTask::new(params))),
        "noisycoin" => Ok(Box::new(NoisyCoin::new(params))),
        other => Err(UnknownEnvKind(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_all_kinds() {
        let p = EnvParams::default();
        for kind in ENV_KINDS {
            let env = make_env(kind, &p).unwrap();
            assert_eq!(env.kind(), *kind);
            assert!(env.action_count() >= 1);
        }
        assert!(make_env("mujoco", &p).is_err());
    }
}
