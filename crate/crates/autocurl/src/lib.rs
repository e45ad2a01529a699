//! Auto-curriculum reinforcement learning from demonstration start states.
//!
//! Demonstrations supply episode start states, a zero-variance filter picks
//! start states with training signal, and a hardest-first descent biases
//! training toward early demonstration states. A trained teacher can then be
//! distilled into an observation-based student by behavior cloning. Everything
//! runs on built-in sparse-reward toy environments.

pub mod codec;
pub mod config;
pub mod curriculum;
pub mod demo;
pub mod distill;
pub mod env;
pub mod learner;
pub mod rng;
pub mod runtime;
pub mod stats;
pub mod tasks;
