//! Orchestration: N actors feeding one learner through the replay buffer,
//! either on a strict deterministic round-robin schedule or on real threads.

use crate::config::ExperimentConfig;
use crate::curriculum::{
    actor_iteration, baseline_iteration, ActorContext, CurriculumConfig, CurriculumError,
    CurriculumEvent, CurriculumMode, ExperienceSink, Verdict,
};
use crate::demo::DemoSet;
use crate::distill::{evaluate, DistillError, SettingsProfile, TeacherAgent};
use crate::env::{Env, Transition};
use crate::learner::{LearnerError, PolicySnapshot, ReplayBuffer, TabularPolicy};
use crate::tasks::{make_env, EnvParams};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker thread panicked")]
    WorkerPanic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Deterministic,
    Parallel,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env_kind: String,
    pub env_params: EnvParams,
    pub curriculum: CurriculumConfig,
    pub discount: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub snippet_len: usize,
    pub max_uses: u32,
    pub capacity: usize,
    pub epsilon: f64,
    /// Per-actor exploration overrides; actor i uses entry i % len. Empty
    /// means every actor uses `epsilon`.
    pub actor_epsilons: Vec<f64>,
    pub actor_count: usize,
    pub budget: u64,
    pub updates_per_round: usize,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub master_seed: u64,
    pub schedule: Schedule,
}

impl RunConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Result<Self, RunError> {
        let curriculum = cfg
            .curriculum
            .to_config()
            .map_err(|e| RunError::Config(e.to_string()))?;
        let schedule = match cfg.runtime.schedule.as_str() {
            "deterministic" => Schedule::Deterministic,
            "parallel" => Schedule::Parallel,
            other => return Err(RunError::Config(format!("unknown schedule {other:?}"))),
        };
        Ok(Self {
            env_kind: cfg.env.kind.clone(),
            env_params: cfg.env.params.clone(),
            curriculum,
            discount: cfg.learner.discount,
            learning_rate: cfg.learner.learning_rate,
            lr_decay: cfg.learner.lr_decay,
            batch_size: cfg.learner.batch_size,
            snippet_len: cfg.learner.snippet_len,
            max_uses: cfg.learner.max_uses,
            capacity: cfg.learner.capacity,
            epsilon: cfg.learner.epsilon,
            actor_epsilons: cfg.learner.actor_epsilons.clone(),
            actor_count: cfg.runtime.actor_count,
            budget: cfg.runtime.budget,
            updates_per_round: cfg.runtime.updates_per_round,
            eval_every: cfg.runtime.eval_every,
            eval_episodes: cfg.runtime.eval_episodes,
            master_seed: cfg.seed,
            schedule,
        })
    }

    fn make_env(&self) -> Result<Box<dyn Env>, RunError> {
        make_env(&self.env_kind, &self.env_params).map_err(|e| RunError::Config(e.to_string()))
    }

    fn actor_epsilon(&self, actor_id: usize) -> f64 {
        if self.actor_epsilons.is_empty() {
            self.epsilon
        } else {
            self.actor_epsilons[actor_id % self.actor_epsilons.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub learner_updates: u64,
    pub eval_success_rate: f64,
    pub replay_snippets: usize,
    pub evictions: u64,
    pub too_hard: u64,
    pub too_easy: u64,
    pub informative: u64,
}

pub const METRICS_HEADER: &str = "env_steps,learner_updates,eval_success_rate,replay_snippets,evictions,too_hard,too_easy,informative";

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), RunError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{:.4},{},{},{},{},{}",
            r.env_steps,
            r.learner_updates,
            r.eval_success_rate,
            r.replay_snippets,
            r.evictions,
            r.too_hard,
            r.too_easy,
            r.informative
        )?;
    }
    f.flush()?;
    Ok(())
}

pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<CurriculumEvent>,
    pub policy: TabularPolicy,
    /// Final exploration-free success rate; None when budget is zero.
    pub final_eval: Option<f64>,
}

fn verdict_tallies(trace: &[CurriculumEvent]) -> (u64, u64, u64) {
    let mut hard = 0;
    let mut easy = 0;
    let mut informative = 0;
    for e in trace {
        match e.verdict {
            Some(Verdict::TooHard) => hard += 1,
            Some(Verdict::TooEasy) => easy += 1,
            Some(Verdict::Informative) => informative += 1,
            None => {}
        }
    }
    (hard, easy, informative)
}

fn precheck(config: &RunConfig, demos: &DemoSet) -> Result<(), RunError> {
    config
        .curriculum
        .validate()
        .map_err(|e| RunError::Config(e.to_string()))?;
    if config.curriculum.mode.needs_demos() && demos.is_empty() {
        return Err(RunError::Config(format!(
            "mode {} requires a non-empty demo set",
            config.curriculum.mode
        )));
    }
    if let Some(kind) = demos.env_kind() {
        if kind != config.env_kind {
            return Err(RunError::Config(format!(
                "demo set is for {kind}, config env is {}",
                config.env_kind
            )));
        }
    }
    Ok(())
}

fn eval_policy(
    snapshot: &PolicySnapshot,
    env: &mut dyn Env,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64, RunError> {
    let mut agent = TeacherAgent(snapshot);
    // Nominal settings: eval measures task mastery, not robustness to the
    // injected training noise (slip alone caps success well below 1.0).
    let report = evaluate(&mut agent, env, n, SettingsProfile::Nominal, rng)?;
    Ok(report.success_rate)
}

fn run_iteration(
    env: &mut dyn Env,
    snapshot: &PolicySnapshot,
    demos: &DemoSet,
    cfg: &CurriculumConfig,
    sink: &mut dyn ExperienceSink,
    ctx: &ActorContext,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<crate::curriculum::IterationOutcome, CurriculumError> {
    if cfg.mode == CurriculumMode::DemoStart {
        actor_iteration(env, snapshot, demos, cfg, sink, ctx, rng)
    } else {
        baseline_iteration(env, snapshot, demos, cfg, sink, ctx, rng)
    }
}

pub fn run(config: &RunConfig, demos: &DemoSet) -> Result<RunOutcome, RunError> {
    precheck(config, demos)?;
    match config.schedule {
        Schedule::Deterministic => run_deterministic(config, demos),
        Schedule::Parallel => run_parallel(config, demos),
    }
}

fn run_deterministic(config: &RunConfig, demos: &DemoSet) -> Result<RunOutcome, RunError> {
    let mut envs: Vec<Box<dyn Env>> = Vec::new();
    let mut actor_rngs = Vec::new();
    for i in 0..config.actor_count {
        envs.push(config.make_env()?);
        actor_rngs.push(crate::rng::stream(config.master_seed, "actor", i as u64));
    }
    let mut eval_env = config.make_env()?;
    let mut learner_rng = crate::rng::stream(config.master_seed, "learner", 0);
    let mut eval_rng = crate::rng::stream(config.master_seed, "eval", 0);

    let mut buffer = ReplayBuffer::new(config.capacity, config.snippet_len, config.max_uses);
    let mut policy = TabularPolicy::new(
        envs[0].action_count(),
        config.learning_rate,
        config.discount,
    );
    policy.lr_decay = config.lr_decay;
    let mut snapshot = policy.publish();
    let counter = AtomicU64::new(0);
    let mut trace: Vec<CurriculumEvent> = Vec::new();
    let mut metrics = Vec::new();
    let mut updates = 0u64;
    let mut next_eval = config.eval_every;

    while counter.load(Ordering::Relaxed) < config.budget {
        for (i, env) in envs.iter_mut().enumerate() {
            let ctx = ActorContext {
                actor_id: i,
                epsilon: config.actor_epsilon(i),
                counter: &counter,
            };
            let out = run_iteration(
                env.as_mut(),
                &snapshot,
                demos,
                &config.curriculum,
                &mut buffer,
                &ctx,
                &mut actor_rngs[i],
            )?;
            trace.extend(out.events);
        }
        for _ in 0..config.updates_per_round {
            match buffer.sample_batch(config.batch_size, &mut learner_rng) {
                Ok(batch) => {
                    policy.update_batch(&batch);
                    updates += 1;
                }
                Err(LearnerError::NotReady { .. }) => break,
                Err(e) => return Err(e.into()),
            }
        }
        snapshot = policy.publish();
        let steps = counter.load(Ordering::Relaxed);
        if config.eval_every > 0 && steps >= next_eval {
            let rate = eval_policy(&snapshot, eval_env.as_mut(), config.eval_episodes, &mut eval_rng)?;
            let (hard, easy, informative) = verdict_tallies(&trace);
            metrics.push(MetricsRow {
                env_steps: steps,
                learner_updates: updates,
                eval_success_rate: rate,
                replay_snippets: buffer.len(),
                evictions: buffer.evictions(),
                too_hard: hard,
                too_easy: easy,
                informative,
            });
            while next_eval <= steps {
                next_eval += config.eval_every;
            }
        }
    }

    // at-most-once accounting: every episode an actor sent appears in the
    // buffer exactly once
    let sent: u64 = trace.iter().map(|e| e.episodes_sent as u64).sum();
    debug_assert_eq!(sent, buffer.episodes_pushed());

    let final_eval = if config.budget > 0 {
        Some(eval_policy(
            &snapshot,
            eval_env.as_mut(),
            config.eval_episodes,
            &mut eval_rng,
        )?)
    } else {
        None
    };
    let _ = sent;
    Ok(RunOutcome {
        metrics,
        trace,
        policy,
        final_eval,
    })
}

/// Shared-buffer sink used by actor threads.
struct SharedSink {
    buffer: Arc<Mutex<ReplayBuffer>>,
    closed: Arc<AtomicBool>,
}

impl ExperienceSink for SharedSink {
    fn send_episode(&mut self, episode: Vec<Transition>) -> bool {
        if self.closed.load(Ordering::Relaxed) {
            return false;
        }
        self.buffer.lock().unwrap().push_episode(episode);
        true
    }
}

fn run_parallel(config: &RunConfig, demos: &DemoSet) -> Result<RunOutcome, RunError> {
    let buffer = Arc::new(Mutex::new(ReplayBuffer::new(
        config.capacity,
        config.snippet_len,
        config.max_uses,
    )));
    let mut policy = TabularPolicy::new(
        config.make_env()?.action_count(),
        config.learning_rate,
        config.discount,
    );
    policy.lr_decay = config.lr_decay;
    let published: Arc<RwLock<Arc<PolicySnapshot>>> = Arc::new(RwLock::new(policy.publish()));
    let counter = Arc::new(AtomicU64::new(0));
    let closed = Arc::new(AtomicBool::new(false));
    let trace: Arc<Mutex<Vec<CurriculumEvent>>> = Arc::new(Mutex::new(Vec::new()));
    let mut metrics = Vec::new();
    let mut updates = 0u64;

    let worker_error: Arc<Mutex<Option<RunError>>> = Arc::new(Mutex::new(None));
    std::thread::scope(|scope| -> Result<(), RunError> {
        let mut handles = Vec::new();
        for i in 0..config.actor_count {
            let mut env = config.make_env()?;
            let mut rng = crate::rng::stream(config.master_seed, "actor", i as u64);
            let buffer = Arc::clone(&buffer);
            let published = Arc::clone(&published);
            let counter = Arc::clone(&counter);
            let closed = Arc::clone(&closed);
            let trace = Arc::clone(&trace);
            let worker_error = Arc::clone(&worker_error);
            let cfg = config.curriculum;
            let budget = config.budget;
            let epsilon = config.actor_epsilon(i);
            handles.push(scope.spawn(move || {
                let mut sink = SharedSink {
                    buffer,
                    closed: Arc::clone(&closed),
                };
                let mut last_version = 0u64;
                while counter.load(Ordering::Relaxed) < budget && !closed.load(Ordering::Relaxed) {
                    let snapshot = Arc::clone(&published.read().unwrap());
                    // publication is monotone from every reader's view
                    assert!(snapshot.version >= last_version);
                    last_version = snapshot.version;
                    let ctx = ActorContext {
                        actor_id: i,
                        epsilon,
                        counter: &counter,
                    };
                    match run_iteration(
                        env.as_mut(),
                        &snapshot,
                        demos,
                        &cfg,
                        &mut sink,
                        &ctx,
                        &mut rng,
                    ) {
                        Ok(out) => trace.lock().unwrap().extend(out.events),
                        Err(CurriculumError::Shutdown) => break,
                        Err(e) => {
                            *worker_error.lock().unwrap() = Some(e.into());
                            closed.store(true, Ordering::Relaxed);
                            break;
                        }
                    }
                }
            }));
        }

        // learner runs on this thread
        let mut learner_rng = crate::rng::stream(config.master_seed, "learner", 0);
        let mut eval_rng = crate::rng::stream(config.master_seed, "eval", 0);
        let mut eval_env = config.make_env()?;
        let mut next_eval = config.eval_every;
        while counter.load(Ordering::Relaxed) < config.budget && !closed.load(Ordering::Relaxed) {
            let batch = buffer
                .lock()
                .unwrap()
                .sample_batch(config.batch_size, &mut learner_rng);
            match batch {
                Ok(batch) => {
                    policy.update_batch(&batch);
                    updates += 1;
                    *published.write().unwrap() = policy.publish();
                }
                Err(LearnerError::NotReady { .. }) => {
                    std::thread::sleep(std::time::Duration::from_millis(1));
                }
                Err(e) => {
                    closed.store(true, Ordering::Relaxed);
                    return Err(e.into());
                }
            }
            let steps = counter.load(Ordering::Relaxed);
            if config.eval_every > 0 && steps >= next_eval {
                let snapshot = Arc::clone(&published.read().unwrap());
                let rate =
                    eval_policy(&snapshot, eval_env.as_mut(), config.eval_episodes, &mut eval_rng)?;
                let (hard, easy, informative) = {
                    let t = trace.lock().unwrap();
                    verdict_tallies(&t)
                };
                let (snippets, evictions) = {
                    let b = buffer.lock().unwrap();
                    (b.len(), b.evictions())
                };
                metrics.push(MetricsRow {
                    env_steps: steps,
                    learner_updates: updates,
                    eval_success_rate: rate,
                    replay_snippets: snippets,
                    evictions,
                    too_hard: hard,
                    too_easy: easy,
                    informative,
                });
                while next_eval <= steps {
                    next_eval += config.eval_every;
                }
            }
        }
        closed.store(true, Ordering::Relaxed);
        Ok(())
    })?;

    if let Some(e) = worker_error.lock().unwrap().take() {
        return Err(e);
    }

    let trace = Arc::try_unwrap(trace)
        .map_err(|_| RunError::WorkerPanic)?
        .into_inner()
        .unwrap();
    {
        let b = buffer.lock().unwrap();
        let sent: u64 = trace.iter().map(|e| e.episodes_sent as u64).sum();
        // A worker interrupted mid-send drops its iteration's trace events
        // after some episodes already reached the buffer, so unlike the
        // deterministic schedule the accounting here is only an upper bound.
        debug_assert!(sent <= b.episodes_pushed());
    }
    let final_eval = if config.budget > 0 {
        let mut eval_env = config.make_env()?;
        let mut eval_rng = crate::rng::stream(config.master_seed, "final-eval", 0);
        Some(eval_policy(
            &policy.publish(),
            eval_env.as_mut(),
            config.eval_episodes,
            &mut eval_rng,
        )?)
    } else {
        None
    };
    Ok(RunOutcome {
        metrics,
        trace,
        policy,
        final_eval,
    })
}

/// Loads a tabular checkpoint and evaluates it exploration-free.
pub fn evaluate_checkpoint(
    path: &Path,
    env: &mut dyn Env,
    n: usize,
    profile: SettingsProfile,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<crate::distill::EvalReport, RunError> {
    let (policy, kind) = TabularPolicy::load_checkpoint(path)?;
    if kind != env.kind() {
        return Err(RunError::Config(format!(
            "checkpoint is for {kind}, env is {}",
            env.kind()
        )));
    }
    let snapshot = policy.publish();
    let mut agent = TeacherAgent(&snapshot);
    Ok(evaluate(&mut agent, env, n, profile, rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::record_demo;
    use crate::env::OracleStyle;

    fn small_config(mode: CurriculumMode, budget: u64, seed: u64) -> RunConfig {
        RunConfig {
            env_kind: "lockchain".into(),
            env_params: EnvParams {
                chain_length: 6,
                ..EnvParams::default()
            },
            curriculum: CurriculumConfig {
                mode,
                ..CurriculumConfig::default()
            },
            discount: 0.99,
            learning_rate: 0.1,
            lr_decay: 0.0,
            batch_size: 64,
            snippet_len: 10,
            max_uses: 2,
            capacity: 2000,
            epsilon: 0.05,
            actor_epsilons: Vec::new(),
            actor_count: 2,
            budget,
            updates_per_round: 16,
            eval_every: 10_000,
            eval_episodes: 50,
            master_seed: seed,
            schedule: Schedule::Deterministic,
        }
    }

    fn small_demos(config: &RunConfig, n: usize) -> DemoSet {
        let mut env = make_env(&config.env_kind, &config.env_params).unwrap();
        let mut rng = crate::rng::stream(config.master_seed, "demo", 0);
        let demos = (0..n)
            .map(|i| {
                record_demo(env.as_mut(), OracleStyle::Optimal, &format!("d{i}"), &mut rng).unwrap()
            })
            .collect();
        DemoSet::new(demos).unwrap()
    }

    #[test]
    fn zero_budget_exits_clean_with_empty_metrics() {
        let config = small_config(CurriculumMode::DemoStart, 0, 1);
        let demos = small_demos(&config, 2);
        let out = run(&config, &demos).unwrap();
        assert!(out.metrics.is_empty());
        assert!(out.trace.is_empty());
        assert!(out.final_eval.is_none());
    }

    #[test]
    fn missing_demos_is_config_error_before_start() {
        let config = small_config(CurriculumMode::DemoStart, 1000, 1);
        assert!(matches!(
            run(&config, &DemoSet::default()),
            Err(RunError::Config(_))
        ));
        // vanilla does not need demos
        let config = small_config(CurriculumMode::Vanilla, 500, 1);
        run(&config, &DemoSet::default()).unwrap();
    }

    #[test]
    fn deterministic_short_run_learns_short_chain() {
        let config = small_config(CurriculumMode::DemoStart, 150_000, 2);
        let demos = small_demos(&config, 3);
        let out = run(&config, &demos).unwrap();
        assert!(
            out.final_eval.unwrap() >= 0.9,
            "final eval {:?}",
            out.final_eval
        );
        assert!(!out.trace.is_empty());
        assert!(!out.metrics.is_empty());
    }

    #[test]
    fn deterministic_runs_are_identical() {
        let config = small_config(CurriculumMode::DemoStart, 30_000, 3);
        let demos = small_demos(&config, 2);
        let a = run(&config, &demos).unwrap();
        let b = run(&config, &demos).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert_eq!(x.wall_step, y.wall_step);
            assert_eq!(x.demo_id, y.demo_id);
            assert_eq!(x.step_index, y.step_index);
            assert_eq!(x.verdict, y.verdict);
            assert_eq!(x.episodes_sent, y.episodes_sent);
        }
        assert_eq!(a.final_eval, b.final_eval);
    }

    #[test]
    fn parallel_run_completes_and_accounts_episodes() {
        let mut config = small_config(CurriculumMode::DemoStart, 60_000, 4);
        config.schedule = Schedule::Parallel;
        let demos = small_demos(&config, 2);
        let out = run(&config, &demos).unwrap();
        assert!(out.final_eval.is_some());
        let sent: u64 = out.trace.iter().map(|e| e.episodes_sent as u64).sum();
        assert!(sent > 0);
    }

    #[test]
    fn metrics_csv_is_stable() {
        let rows = vec![MetricsRow {
            env_steps: 100,
            learner_updates: 5,
            eval_success_rate: 0.25,
            replay_snippets: 7,
            evictions: 0,
            too_hard: 3,
            too_easy: 1,
            informative: 2,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            format!("{METRICS_HEADER}\n100,5,0.2500,7,0,3,1,2\n")
        );
    }

    #[test]
    fn checkpoint_eval_round_trip() {
        let config = small_config(CurriculumMode::DemoStart, 100_000, 5);
        let demos = small_demos(&config, 2);
        let out = run(&config, &demos).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.acpl");
        out.policy.save_checkpoint(&path, &config.env_kind).unwrap();
        let mut env = make_env(&config.env_kind, &config.env_params).unwrap();
        let mut rng = crate::rng::stream(9, "eval", 0);
        let report =
            evaluate_checkpoint(&path, env.as_mut(), 100, SettingsProfile::Nominal, &mut rng)
                .unwrap();
        assert!((report.success_rate - out.final_eval.unwrap()).abs() < 0.3);
    }
}
