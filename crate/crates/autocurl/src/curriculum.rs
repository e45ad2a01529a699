//! Start-state curriculum: demo states as episode starts, zero-variance
//! filtering of probe outcomes, and hardest-informative-first descent, plus
//! the baseline variants used for ablations.

use crate::demo::{chunk_sample, DemoSet};
use crate::env::{Env, EnvError, Provenance, StartState, TaskParams, Transition};
use crate::learner::PolicySnapshot;
use rand::Rng;
use rand_chacha::rand_core::RngCore;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("experience sink closed")]
    Shutdown,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    TooHard,
    TooEasy,
    Informative,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::TooHard => "too_hard",
            Verdict::TooEasy => "too_easy",
            Verdict::Informative => "informative",
        };
        f.write_str(s)
    }
}

/// Zero-variance filter: a start state is informative exactly when probe
/// outcomes disagree.
pub fn zvf(outcomes: &[bool]) -> Result<Verdict, CurriculumError> {
    if outcomes.is_empty() {
        return Err(CurriculumError::InvalidInput("empty outcome vector".into()));
    }
    let successes = outcomes.iter().filter(|&&o| o).count();
    Ok(if successes == 0 {
        Verdict::TooHard
    } else if successes == outcomes.len() {
        Verdict::TooEasy
    } else {
        Verdict::Informative
    })
}

/// Success filter: informative when any probe succeeds; never TooEasy.
pub fn success_filter(outcomes: &[bool]) -> Result<Verdict, CurriculumError> {
    if outcomes.is_empty() {
        return Err(CurriculumError::InvalidInput("empty outcome vector".into()));
    }
    Ok(if outcomes.iter().any(|&o| o) {
        Verdict::Informative
    } else {
        Verdict::TooHard
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurriculumMode {
    DemoStart,
    Vanilla,
    Mixture,
    MixtureSuccessFilter,
    MixtureZvf,
}

impl CurriculumMode {
    pub const ALL: [CurriculumMode; 5] = [
        CurriculumMode::DemoStart,
        CurriculumMode::Vanilla,
        CurriculumMode::Mixture,
        CurriculumMode::MixtureSuccessFilter,
        CurriculumMode::MixtureZvf,
    ];

    pub fn parse(s: &str) -> Result<Self, CurriculumError> {
        match s {
            "demostart" => Ok(CurriculumMode::DemoStart),
            "vanilla" => Ok(CurriculumMode::Vanilla),
            "mixture" => Ok(CurriculumMode::Mixture),
            "mixture-success-filter" => Ok(CurriculumMode::MixtureSuccessFilter),
            "mixture-zvf" => Ok(CurriculumMode::MixtureZvf),
            other => Err(CurriculumError::Config(format!("unknown mode {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CurriculumMode::DemoStart => "demostart",
            CurriculumMode::Vanilla => "vanilla",
            CurriculumMode::Mixture => "mixture",
            CurriculumMode::MixtureSuccessFilter => "mixture-success-filter",
            CurriculumMode::MixtureZvf => "mixture-zvf",
        }
    }

    pub fn needs_demos(&self) -> bool {
        !matches!(self, CurriculumMode::Vanilla)
    }
}

impl fmt::Display for CurriculumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CurriculumConfig {
    pub mode: CurriculumMode,
    /// Temporal chunks per demo (start states per sequence).
    pub k: usize,
    /// Probe episodes per start state.
    pub t: usize,
    /// Training episodes generated on the selected start state.
    pub m: usize,
    /// Native-start fraction for the mixture baselines.
    pub p_target: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            mode: CurriculumMode::DemoStart,
            k: 8,
            t: 4,
            m: 50,
            p_target: 0.2,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if self.k < 1 {
            return Err(CurriculumError::Config("k must be >= 1".into()));
        }
        if self.t < 2 {
            return Err(CurriculumError::Config("t must be >= 2".into()));
        }
        if self.m < 1 {
            return Err(CurriculumError::Config("m must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_target) {
            return Err(CurriculumError::Config("p_target outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Start-state sequence for one descent: a native draw first, then demo
/// states ordered earliest chunk first (hardest to easiest).
#[derive(Debug, Clone)]
pub struct TpSequence {
    pub tps: Vec<TaskParams>,
    pub demo_id: String,
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub outcomes: Vec<bool>,
    pub verdict: Verdict,
    pub episodes: Vec<Vec<Transition>>,
    pub env_steps: u64,
}

/// One trace row: which start state was probed, with what outcome.
#[derive(Debug, Clone)]
pub struct CurriculumEvent {
    pub wall_step: u64,
    pub actor_id: usize,
    pub policy_version: u64,
    /// Demo identifier, or "target" for native draws.
    pub demo_id: String,
    /// Snapshot index within the demo; -1 for native draws.
    pub step_index: i64,
    /// Chunk index within the sequence; -1 for native draws.
    pub chunk_index: i64,
    pub verdict: Option<Verdict>,
    pub episodes_sent: usize,
}

/// Consumer of finished training episodes. `send_episode` returns false once
/// the consumer has shut down.
pub trait ExperienceSink {
    fn send_episode(&mut self, episode: Vec<Transition>) -> bool;
}

impl ExperienceSink for crate::learner::ReplayBuffer {
    fn send_episode(&mut self, episode: Vec<Transition>) -> bool {
        self.push_episode(episode);
        true
    }
}

/// Builds one descent sequence: a fresh native TP, then one start state per
/// temporal chunk of a uniformly chosen demo. Demo-provenance TPs carry zero
/// slip and perturbation settings; the demo's recorded goal is copied.
pub fn build_sequence(
    demos: &DemoSet,
    env: &dyn Env,
    cfg: &CurriculumConfig,
    rng: &mut dyn RngCore,
) -> Result<TpSequence, CurriculumError> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(CurriculumError::Config(
            "demo set is empty but the curriculum mode requires demos".into(),
        ));
    }
    let psi0 = env.sample_target_tp(crate::env::SampleMode::Training, rng);
    // The whole descent shares ψ0's difficulty; re-rolling it per chunk would
    // let an easy mid-sequence verdict abort the walk toward the hard frontier.
    let difficulty = psi0.difficulty;
    let demo = &demos.demos[rng.gen_range(0..demos.len())];
    let mut tps = vec![psi0];
    for (snapshot, step_index, chunk_index) in chunk_sample(demo, cfg.k, rng) {
        let mut tp =
            demo_tp(env, snapshot, demo.goal, &demo.demo_id, step_index, chunk_index, rng);
        tp.difficulty = difficulty;
        tps.push(tp);
    }
    Ok(TpSequence {
        tps,
        demo_id: demo.demo_id.clone(),
    })
}

/// Demo-provenance TP: settings and difficulty drawn like a native TP, then
/// slip and perturbations forced to zero for the demo-initialized episode.
fn demo_tp(
    env: &dyn Env,
    snapshot: crate::env::StateSnapshot,
    goal: Option<crate::env::GoalSpec>,
    demo_id: &str,
    step_index: usize,
    chunk_index: usize,
    rng: &mut dyn RngCore,
) -> TaskParams {
    let draw = env.sample_target_tp(crate::env::SampleMode::Training, rng);
    let mut settings = draw.settings;
    settings.slip_probability = 0.0;
    settings.perturbation_rate = 0.0;
    TaskParams {
        start: StartState::DemoState(snapshot),
        settings,
        goal: if env.goal_conditioned() { goal } else { None },
        provenance: Provenance::Demo {
            demo_id: demo_id.to_string(),
            step_index,
            chunk_index,
        },
        difficulty: draw.difficulty,
    }
}

/// Runs one episode with the stochastic behavior policy.
pub fn run_episode(
    env: &mut dyn Env,
    tp: &TaskParams,
    policy: &PolicySnapshot,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Transition>, bool), EnvError> {
    let mut obs = env.reset_with(tp, rng)?;
    let mut episode = Vec::new();
    let mut success = false;
    while !env.episode_finished() {
        let action = policy.act(&obs, epsilon, rng);
        let t = env.step(action)?;
        obs = t.next_observation.clone();
        if t.reward == 1 {
            success = true;
        }
        episode.push(t);
    }
    Ok((episode, success))
}

/// Probes a start state with `t` independent behavior-policy episodes and
/// classifies it. Probe experience is returned to the caller, never sent to
/// training by the descent procedure.
pub fn probe(
    env: &mut dyn Env,
    policy: &PolicySnapshot,
    tp: &TaskParams,
    t: usize,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<ProbeResult, CurriculumError> {
    let mut outcomes = Vec::with_capacity(t);
    let mut episodes = Vec::with_capacity(t);
    let mut env_steps = 0u64;
    for _ in 0..t {
        let (episode, success) = run_episode(env, tp, policy, epsilon, rng)?;
        env_steps += episode.len() as u64;
        outcomes.push(success);
        episodes.push(episode);
    }
    let verdict = zvf(&outcomes)?;
    Ok(ProbeResult {
        outcomes,
        verdict,
        episodes,
        env_steps,
    })
}

pub struct ActorContext<'a> {
    pub actor_id: usize,
    pub epsilon: f64,
    /// Global env-step counter shared by all actors.
    pub counter: &'a AtomicU64,
}

impl<'a> ActorContext<'a> {
    fn add_steps(&self, n: u64) -> u64 {
        self.counter.fetch_add(n, Ordering::Relaxed) + n
    }
}

#[derive(Debug, Default)]
pub struct IterationOutcome {
    pub events: Vec<CurriculumEvent>,
    pub env_steps: u64,
    /// True when training episodes were sent this iteration.
    pub trained: bool,
}

fn event_for(
    ctx: &ActorContext,
    policy: &PolicySnapshot,
    wall_step: u64,
    tp: &TaskParams,
    demo_id: &str,
    verdict: Option<Verdict>,
    episodes_sent: usize,
) -> CurriculumEvent {
    let (demo_id, step_index, chunk_index) = match &tp.provenance {
        Provenance::Target => ("target".to_string(), -1, -1),
        Provenance::Demo {
            step_index,
            chunk_index,
            ..
        } => (demo_id.to_string(), *step_index as i64, *chunk_index as i64),
    };
    CurriculumEvent {
        wall_step,
        actor_id: ctx.actor_id,
        policy_version: policy.version,
        demo_id,
        step_index,
        chunk_index,
        verdict,
        episodes_sent,
    }
}

/// One descent: probe start states hardest-first, skip the too-hard ones,
/// give up on a too-easy one (the caller restarts with a fresh sequence), and
/// train on the first informative one by sending `m` fresh episodes.
pub fn actor_iteration(
    env: &mut dyn Env,
    policy: &PolicySnapshot,
    demos: &DemoSet,
    cfg: &CurriculumConfig,
    sink: &mut dyn ExperienceSink,
    ctx: &ActorContext,
    rng: &mut dyn RngCore,
) -> Result<IterationOutcome, CurriculumError> {
    if cfg.mode != CurriculumMode::DemoStart {
        return Err(CurriculumError::Config(format!(
            "actor_iteration requires demostart mode, got {}",
            cfg.mode
        )));
    }
    let sequence = build_sequence(demos, env, cfg, rng)?;
    let mut out = IterationOutcome::default();
    for tp in &sequence.tps {
        let result = probe(env, policy, tp, cfg.t, ctx.epsilon, rng)?;
        out.env_steps += result.env_steps;
        let wall = ctx.add_steps(result.env_steps);
        match result.verdict {
            Verdict::TooHard => {
                out.events.push(event_for(
                    ctx,
                    policy,
                    wall,
                    tp,
                    &sequence.demo_id,
                    Some(Verdict::TooHard),
                    0,
                ));
            }
            Verdict::TooEasy => {
                out.events.push(event_for(
                    ctx,
                    policy,
                    wall,
                    tp,
                    &sequence.demo_id,
                    Some(Verdict::TooEasy),
                    0,
                ));
                return Ok(out);
            }
            Verdict::Informative => {
                let mut train_steps = 0u64;
                for _ in 0..cfg.m {
                    let (episode, _) = run_episode(env, tp, policy, ctx.epsilon, rng)?;
                    train_steps += episode.len() as u64;
                    if !sink.send_episode(episode) {
                        return Err(CurriculumError::Shutdown);
                    }
                }
                out.env_steps += train_steps;
                let wall = ctx.add_steps(train_steps);
                out.events.push(event_for(
                    ctx,
                    policy,
                    wall,
                    tp,
                    &sequence.demo_id,
                    Some(Verdict::Informative),
                    cfg.m,
                ));
                out.trained = true;
                return Ok(out);
            }
        }
    }
    Ok(out)
}

/// Draws a baseline start state: native with probability `p_target`, else a
/// uniform state over all demo snapshots (flattened across demos).
fn mixture_tp(
    env: &dyn Env,
    demos: &DemoSet,
    p_target: f64,
    rng: &mut dyn RngCore,
) -> Result<TaskParams, CurriculumError> {
    if rng.gen::<f64>() < p_target {
        return Ok(env.sample_target_tp(crate::env::SampleMode::Training, rng));
    }
    let total: usize = demos.demos.iter().map(|d| d.len()).sum();
    if total == 0 {
        return Err(CurriculumError::Config(
            "demo set is empty but the curriculum mode requires demos".into(),
        ));
    }
    let mut pick = rng.gen_range(0..total);
    for demo in &demos.demos {
        if pick < demo.len() {
            return Ok(demo_tp(
                env,
                demo.snapshots[pick].clone(),
                demo.goal,
                &demo.demo_id,
                pick,
                0,
                rng,
            ));
        }
        pick -= demo.len();
    }
    unreachable!("pick < total");
}

/// One iteration of a non-descent baseline. Vanilla and Mixture send every
/// generated episode; the filtered mixtures send their probe episodes only
/// when the filter calls the start state informative.
pub fn baseline_iteration(
    env: &mut dyn Env,
    policy: &PolicySnapshot,
    demos: &DemoSet,
    cfg: &CurriculumConfig,
    sink: &mut dyn ExperienceSink,
    ctx: &ActorContext,
    rng: &mut dyn RngCore,
) -> Result<IterationOutcome, CurriculumError> {
    cfg.validate()?;
    let mut out = IterationOutcome::default();
    match cfg.mode {
        CurriculumMode::DemoStart => {
            return Err(CurriculumError::Config(
                "baseline_iteration does not run demostart".into(),
            ))
        }
        CurriculumMode::Vanilla | CurriculumMode::Mixture => {
            let tp = if cfg.mode == CurriculumMode::Vanilla {
                env.sample_target_tp(crate::env::SampleMode::Training, rng)
            } else {
                mixture_tp(env, demos, cfg.p_target, rng)?
            };
            let mut steps = 0u64;
            for _ in 0..cfg.m {
                let (episode, _) = run_episode(env, &tp, policy, ctx.epsilon, rng)?;
                steps += episode.len() as u64;
                if !sink.send_episode(episode) {
                    return Err(CurriculumError::Shutdown);
                }
            }
            out.env_steps = steps;
            let wall = ctx.add_steps(steps);
            out.events
                .push(event_for(ctx, policy, wall, &tp, demo_id_of(&tp), None, cfg.m));
            out.trained = true;
        }
        CurriculumMode::MixtureSuccessFilter | CurriculumMode::MixtureZvf => {
            let tp = mixture_tp(env, demos, cfg.p_target, rng)?;
            let result = probe(env, policy, &tp, cfg.t, ctx.epsilon, rng)?;
            out.env_steps = result.env_steps;
            let wall = ctx.add_steps(result.env_steps);
            let verdict = if cfg.mode == CurriculumMode::MixtureZvf {
                result.verdict
            } else {
                success_filter(&result.outcomes)?
            };
            let mut sent = 0;
            if verdict == Verdict::Informative {
                for episode in result.episodes {
                    if !sink.send_episode(episode) {
                        return Err(CurriculumError::Shutdown);
                    }
                    sent += 1;
                }
                out.trained = true;
            }
            out.events
                .push(event_for(ctx, policy, wall, &tp, demo_id_of(&tp), Some(verdict), sent));
        }
    }
    Ok(out)
}

fn demo_id_of(tp: &TaskParams) -> &str {
    match &tp.provenance {
        Provenance::Target => "target",
        Provenance::Demo { demo_id, .. } => demo_id,
    }
}

pub const TRACE_HEADER: &str =
    "wall_step,actor_id,policy_version,demo_id,step_index,chunk_index,verdict,episodes_sent";

pub fn write_trace(path: &Path, events: &[CurriculumEvent]) -> Result<(), CurriculumError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{TRACE_HEADER}")?;
    for e in events {
        let verdict = match e.verdict {
            Some(v) => v.to_string(),
            None => "none".to_string(),
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            e.wall_step,
            e.actor_id,
            e.policy_version,
            e.demo_id,
            e.step_index,
            e.chunk_index,
            verdict,
            e.episodes_sent
        )?;
    }
    f.flush()?;
    Ok(())
}
