//! Teacher-to-student distillation: roll out a trained policy under domain
//! randomization, keep the successful episodes as a behavior-cloning dataset
//! of rendered observations, and fit a small feed-forward student.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::env::{Env, EnvError, EnvSettings, SampleMode};
use crate::learner::PolicySnapshot;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

const DATASET_MAGIC: &[u8; 4] = b"ACDS";
const DATASET_VERSION: u32 = 1;
const NET_MODE: &str = "bc-net";

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("generation stalled: {successes} successes in {attempts} episodes (floor {floor})")]
    GenerationStalled {
        successes: usize,
        attempts: usize,
        floor: f64,
    },
    #[error("training diverged at epoch {epoch} (loss became non-finite)")]
    TrainingDiverged { epoch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset format error: {0}")]
    Format(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Visual randomization applied at render time. All-zero settings make the
/// rendered observation a deterministic function of state.
#[derive(Debug, Clone, Copy)]
pub struct DrConfig {
    /// Base seed folded with each episode's observation_seed.
    pub permutation_seed: u64,
    /// Additive per-channel noise, Uniform(-scale, scale).
    pub noise_scale: f64,
    /// Per-channel zeroing probability.
    pub dropout_prob: f64,
    /// Uninformative channels appended and shuffled per episode.
    pub decoy_channels: usize,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            permutation_seed: 0,
            noise_scale: 0.05,
            dropout_prob: 0.05,
            decoy_channels: 8,
        }
    }
}

impl DrConfig {
    pub fn none() -> Self {
        Self {
            permutation_seed: 0,
            noise_scale: 0.0,
            dropout_prob: 0.0,
            decoy_channels: 0,
        }
    }
}

/// Renders the student's observation from env state: the env's spatial
/// one-hot channels plus decoy channels, with episode-seeded noise, dropout,
/// and a per-episode permutation of the decoy block.
pub struct ObsRenderer {
    dr: DrConfig,
    base_dim: usize,
    perm: Vec<usize>,
    rng: ChaCha8Rng,
}

impl ObsRenderer {
    pub fn new(env: &dyn Env, dr: DrConfig) -> Self {
        Self {
            dr,
            base_dim: env.render_dim(),
            perm: (0..dr.decoy_channels).collect(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.base_dim + self.dr.decoy_channels
    }

    pub fn begin_episode(&mut self, observation_seed: u64) {
        let seed = crate::rng::split(self.dr.permutation_seed, "visual-dr", observation_seed);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.perm = (0..self.dr.decoy_channels).collect();
        self.perm.shuffle(&mut self.rng);
    }

    pub fn render(&mut self, env: &dyn Env) -> Vec<f64> {
        let mut v = env.render_obs();
        debug_assert_eq!(v.len(), self.base_dim);
        let decoys: Vec<f64> = (0..self.dr.decoy_channels)
            .map(|_| self.rng.gen::<f64>())
            .collect();
        for &p in &self.perm {
            v.push(decoys[p]);
        }
        if self.dr.noise_scale > 0.0 {
            for x in v.iter_mut() {
                *x += self.rng.gen_range(-self.dr.noise_scale..self.dr.noise_scale);
            }
        }
        if self.dr.dropout_prob > 0.0 {
            for x in v.iter_mut() {
                if self.rng.gen::<f64>() < self.dr.dropout_prob {
                    *x = 0.0;
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BCRecord {
    pub observation: Vec<f64>,
    pub action: u32,
    pub episode_id: u32,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BCDataset {
    pub env_kind: String,
    pub obs_dim: usize,
    pub action_count: usize,
    pub records: Vec<BCRecord>,
}

impl BCDataset {
    pub fn save(&self, path: &Path) -> Result<(), DistillError> {
        let mut w = ByteWriter::new();
        w.put_raw(DATASET_MAGIC);
        w.put_u32(DATASET_VERSION);
        w.put_str(&self.env_kind);
        w.put_u32(self.obs_dim as u32);
        w.put_u32(self.action_count as u32);
        w.put_u32(self.records.len() as u32);
        for r in &self.records {
            w.put_u32(r.episode_id);
            w.put_u32(r.step);
            w.put_u32(r.action);
            for &x in &r.observation {
                w.put_f64(x);
            }
        }
        std::fs::write(path, w.into_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DistillError> {
        let bytes = std::fs::read(path)?;
        let mut r = ByteReader::new(&bytes);
        r.expect_magic(DATASET_MAGIC)?;
        let version = r.get_u32()?;
        if version != DATASET_VERSION {
            return Err(DistillError::UnsupportedVersion(version));
        }
        let env_kind = r.get_str()?;
        let obs_dim = r.get_u32()? as usize;
        let action_count = r.get_u32()? as usize;
        let count = r.get_u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let episode_id = r.get_u32()?;
            let step = r.get_u32()?;
            let action = r.get_u32()?;
            let mut observation = Vec::with_capacity(obs_dim);
            for _ in 0..obs_dim {
                observation.push(r.get_f64()?);
            }
            records.push(BCRecord {
                observation,
                action,
                episode_id,
                step,
            });
        }
        r.expect_end()?;
        Ok(Self {
            env_kind,
            obs_dim,
            action_count,
            records,
        })
    }
}

/// Rolls out the teacher with small exploration noise from native training
/// starts under full domain randomization, keeping only successful episodes.
/// Errors when fewer than `floor` of the rollouts succeed.
pub fn generate_dataset(
    teacher: &PolicySnapshot,
    env: &mut dyn Env,
    n_episodes: usize,
    dr: DrConfig,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<BCDataset, DistillError> {
    let floor = 0.01;
    let mut renderer = ObsRenderer::new(env, dr);
    let mut records = Vec::new();
    let mut successes = 0usize;
    let mut episode_id = 0u32;
    for _ in 0..n_episodes {
        let tp = env.sample_target_tp(SampleMode::Training, rng);
        let mut obs = env.reset_with(&tp, rng)?;
        renderer.begin_episode(tp.settings.observation_seed);
        let mut episode = Vec::new();
        let mut success = false;
        let mut step = 0u32;
        while !env.episode_finished() {
            let rendered = renderer.render(env);
            let action = teacher.act(&obs, epsilon, rng);
            let t = env.step(action)?;
            obs = t.next_observation.clone();
            episode.push(BCRecord {
                observation: rendered,
                action: t.action as u32,
                episode_id,
                step,
            });
            step += 1;
            if t.reward == 1 {
                success = true;
            }
        }
        if success {
            successes += 1;
            records.extend(episode);
            episode_id += 1;
        }
    }
    if (successes as f64) < floor * n_episodes as f64 {
        return Err(DistillError::GenerationStalled {
            successes,
            attempts: n_episodes,
            floor,
        });
    }
    Ok(BCDataset {
        env_kind: env.kind().to_string(),
        obs_dim: renderer.obs_dim(),
        action_count: env.action_count(),
        records,
    })
}

/// Fully connected net: rectifier hidden layers, identity output (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    pub sizes: Vec<usize>,
    /// weights[l] is sizes[l+1] x sizes[l], row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl FeedForwardNet {
    pub fn new(sizes: &[usize], rng: &mut dyn RngCore) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let scale = (2.0 / sizes[l] as f64).sqrt();
            weights.push(
                (0..sizes[l + 1] * sizes[l])
                    .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
                    .collect(),
            );
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn param(&self, idx: usize) -> f64 {
        *self.param_slot(idx)
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        *self.param_slot_mut(idx) = v;
    }

    fn param_slot(&self, mut idx: usize) -> &f64 {
        for w in &self.weights {
            if idx < w.len() {
                return &w[idx];
            }
            idx -= w.len();
        }
        for b in &self.biases {
            if idx < b.len() {
                return &b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn param_slot_mut(&mut self, mut idx: usize) -> &mut f64 {
        for w in &mut self.weights {
            if idx < w.len() {
                return &mut w[idx];
            }
            idx -= w.len();
        }
        for b in &mut self.biases {
            if idx < b.len() {
                return &mut b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Forward pass returning all layer activations (input first, logits last).
    fn forward_full(&self, input: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(input.len(), self.sizes[0]);
        let mut acts = vec![input.to_vec()];
        let layers = self.weights.len();
        for l in 0..layers {
            let (n_out, n_in) = (self.sizes[l + 1], self.sizes[l]);
            let prev = &acts[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
            }
            if l + 1 < layers {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
            let _ = n_out;
        }
        acts
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.forward_full(input).pop().unwrap()
    }

    pub fn predict(&self, input: &[f64]) -> usize {
        let logits = self.logits(input);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    /// Mean cross-entropy of the labels under softmax logits.
    pub fn loss(&self, batch: &[BCRecord]) -> f64 {
        assert!(!batch.is_empty());
        let mut total = 0.0;
        for r in batch {
            let logits = self.logits(&r.observation);
            total -= log_softmax(&logits)[r.action as usize];
        }
        total / batch.len() as f64
    }

    /// Mean loss and its gradient in the same layout as weights/biases.
    pub fn loss_and_grad(&self, batch: &[BCRecord]) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        assert!(!batch.is_empty());
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let layers = self.weights.len();
        for r in batch {
            let acts = self.forward_full(&r.observation);
            let logits = &acts[layers];
            let log_probs = log_softmax(logits);
            total -= log_probs[r.action as usize];
            // delta at the output: softmax - one_hot
            let mut delta: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
            delta[r.action as usize] -= 1.0;
            for l in (0..layers).rev() {
                let n_in = self.sizes[l];
                let prev = &acts[l];
                for (o, &d) in delta.iter().enumerate() {
                    gb[l][o] += scale * d;
                    let row = &mut gw[l][o * n_in..(o + 1) * n_in];
                    for (gwi, &a) in row.iter_mut().zip(prev) {
                        *gwi += scale * d * a;
                    }
                }
                if l > 0 {
                    let mut next = vec![0.0; n_in];
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                        for (ni, &w) in row.iter().enumerate() {
                            next[ni] += d * w;
                        }
                    }
                    // rectifier gate of the hidden activation
                    for (v, &a) in next.iter_mut().zip(&acts[l]) {
                        if a <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    delta = next;
                }
            }
        }
        (total * scale, gw, gb)
    }

    pub fn save(&self, path: &Path, env_kind: &str) -> Result<(), DistillError> {
        std::fs::write(path, self.encode(env_kind))?;
        Ok(())
    }

    fn encode(&self, env_kind: &str) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_raw(crate::learner::CHECKPOINT_MAGIC);
        w.put_u32(crate::learner::CHECKPOINT_VERSION);
        w.put_str(env_kind);
        w.put_str(NET_MODE);
        w.put_u32(self.sizes.len() as u32);
        for &s in &self.sizes {
            w.put_u32(s as u32);
        }
        for layer in self.weights.iter().chain(&self.biases) {
            for &v in layer {
                w.put_f64(v);
            }
        }
        w.into_bytes()
    }

    pub fn load(path: &Path) -> Result<(Self, String), DistillError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn decode(bytes: &[u8]) -> Result<(Self, String), DistillError> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(crate::learner::CHECKPOINT_MAGIC)?;
        let version = r.get_u32()?;
        if version != crate::learner::CHECKPOINT_VERSION {
            return Err(DistillError::UnsupportedVersion(version));
        }
        let env_kind = r.get_str()?;
        let mode = r.get_str()?;
        if mode != NET_MODE {
            return Err(DistillError::DimensionMismatch(format!(
                "checkpoint holds a {mode} policy, expected {NET_MODE}"
            )));
        }
        let n_layers = r.get_u32()? as usize;
        let mut sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            sizes.push(r.get_u32()? as usize);
        }
        if sizes.len() < 2 {
            return Err(DistillError::DimensionMismatch("layer chain too short".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let mut w = Vec::with_capacity(sizes[l + 1] * sizes[l]);
            for _ in 0..sizes[l + 1] * sizes[l] {
                w.push(r.get_f64()?);
            }
            weights.push(w);
        }
        for l in 0..sizes.len() - 1 {
            let mut b = Vec::with_capacity(sizes[l + 1]);
            for _ in 0..sizes[l + 1] {
                b.push(r.get_f64()?);
            }
            biases.push(b);
        }
        r.expect_end()?;
        Ok((
            Self {
                sizes,
                weights,
                biases,
            },
            env_kind,
        ))
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - log_sum).collect()
}

#[derive(Debug, Clone)]
pub struct BcOptConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for BcOptConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 256,
            epochs: 40,
        }
    }
}

/// Trains a student by behavior cloning with momentum SGD; returns the
/// parameters with the best held-out loss (10% split).
pub fn train_bc(
    dataset: &BCDataset,
    cfg: &BcOptConfig,
    rng: &mut dyn RngCore,
) -> Result<FeedForwardNet, DistillError> {
    if dataset.records.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let mut sizes = vec![dataset.obs_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(dataset.action_count);
    let mut net = FeedForwardNet::new(&sizes, rng);

    let mut indices: Vec<usize> = (0..dataset.records.len()).collect();
    indices.shuffle(rng);
    let holdout_len = (indices.len() / 10).max(1).min(indices.len() - 1);
    let (holdout_idx, train_idx) = indices.split_at(holdout_len);
    let holdout: Vec<BCRecord> = holdout_idx
        .iter()
        .map(|&i| dataset.records[i].clone())
        .collect();
    let mut train: Vec<BCRecord> = train_idx
        .iter()
        .map(|&i| dataset.records[i].clone())
        .collect();

    let mut vw: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut vb: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut best = net.clone();
    let mut best_loss = net.loss(&holdout);
    for epoch in 0..cfg.epochs {
        train.shuffle(rng);
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            let (loss, gw, gb) = net.loss_and_grad(chunk);
            if !loss.is_finite() {
                return Err(DistillError::TrainingDiverged { epoch });
            }
            for l in 0..net.weights.len() {
                for (i, g) in gw[l].iter().enumerate() {
                    vw[l][i] = cfg.momentum * vw[l][i] - cfg.learning_rate * g;
                    net.weights[l][i] += vw[l][i];
                }
                for (i, g) in gb[l].iter().enumerate() {
                    vb[l][i] = cfg.momentum * vb[l][i] - cfg.learning_rate * g;
                    net.biases[l][i] += vb[l][i];
                }
            }
        }
        let holdout_loss = net.loss(&holdout);
        if !holdout_loss.is_finite() {
            return Err(DistillError::TrainingDiverged { epoch });
        }
        if holdout_loss < best_loss {
            best_loss = holdout_loss;
            best = net.clone();
        }
    }
    Ok(best)
}

/// Compares the analytic gradient to central finite differences on a random
/// subset of at least `min(100, num_params)` coordinates; returns the max
/// relative error. Coordinates where both gradients vanish are skipped.
pub fn grad_check(
    net: &mut FeedForwardNet,
    batch: &[BCRecord],
    h: f64,
    rng: &mut dyn RngCore,
) -> f64 {
    assert!(h > 0.0 && h <= 1e-2);
    let (_, gw, gb) = net.loss_and_grad(batch);
    let analytic: Vec<f64> = gw
        .iter()
        .flat_map(|v| v.iter().cloned())
        .chain(gb.iter().flat_map(|v| v.iter().cloned()))
        .collect();
    let n = net.num_params();
    let check = n.min(100.max(n / 50));
    let mut coords: Vec<usize> = (0..n).collect();
    coords.shuffle(rng);
    let mut max_err: f64 = 0.0;
    for &idx in coords.iter().take(check) {
        let orig = net.param(idx);
        net.set_param(idx, orig + h);
        let plus = net.loss(batch);
        net.set_param(idx, orig - h);
        let minus = net.loss(batch);
        net.set_param(idx, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[idx];
        if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
            continue;
        }
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    max_err
}

/// Physics/perturbation settings used during evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingsProfile {
    /// Zero slip and perturbations.
    Nominal,
    /// Settings drawn from the env's declared ranges.
    Randomized,
}

/// Anything that can pick actions during evaluation.
pub trait EvalAgent {
    fn begin_episode(&mut self, observation_seed: u64);
    fn act(&mut self, env: &dyn Env) -> usize;
}

/// Greedy tabular teacher acting on the compact observation.
pub struct TeacherAgent<'a>(pub &'a PolicySnapshot);

impl EvalAgent for TeacherAgent<'_> {
    fn begin_episode(&mut self, _observation_seed: u64) {}

    fn act(&mut self, env: &dyn Env) -> usize {
        self.0.greedy(&env.observe())
    }
}

/// Student acting on the rendered observation.
pub struct StudentAgent {
    pub net: FeedForwardNet,
    pub renderer: ObsRenderer,
}

impl EvalAgent for StudentAgent {
    fn begin_episode(&mut self, observation_seed: u64) {
        self.renderer.begin_episode(observation_seed);
    }

    fn act(&mut self, env: &dyn Env) -> usize {
        let obs = self.renderer.render(env);
        self.net.predict(&obs)
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub success_rate: f64,
    pub episodes: usize,
    /// (step, fraction of episodes successful within that many steps).
    pub success_by_step: Vec<(u32, f64)>,
}

/// Runs `n` exploration-free episodes from native evaluation starts and
/// reports the success rate plus the success-versus-elapsed-steps curve.
pub fn evaluate(
    agent: &mut dyn EvalAgent,
    env: &mut dyn Env,
    n: usize,
    profile: SettingsProfile,
    rng: &mut dyn RngCore,
) -> Result<EvalReport, DistillError> {
    assert!(n >= 1);
    let mut success_steps = Vec::new();
    let mut limit = 0u32;
    for _ in 0..n {
        let mut tp = env.sample_target_tp(SampleMode::Evaluation, rng);
        if profile == SettingsProfile::Nominal {
            let mut s = EnvSettings::nominal(tp.settings.episode_step_limit);
            s.observation_seed = tp.settings.observation_seed;
            tp.settings = s;
        }
        limit = limit.max(tp.settings.episode_step_limit);
        agent.begin_episode(tp.settings.observation_seed);
        env.reset_with(&tp, rng)?;
        let mut steps = 0u32;
        let mut success = None;
        while !env.episode_finished() {
            let action = agent.act(env);
            let t = env.step(action)?;
            steps += 1;
            if t.reward == 1 {
                success = Some(steps);
            }
        }
        success_steps.push(success);
    }
    let successes = success_steps.iter().filter(|s| s.is_some()).count();
    let buckets = 20u32;
    let mut curve = Vec::new();
    for b in 1..=buckets {
        let cutoff = (limit as u64 * b as u64).div_ceil(buckets as u64) as u32;
        let within = success_steps
            .iter()
            .filter(|s| matches!(s, Some(st) if *st <= cutoff))
            .count();
        curve.push((cutoff, within as f64 / n as f64));
    }
    Ok(EvalReport {
        success_rate: successes as f64 / n as f64,
        episodes: n,
        success_by_step: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::OracleStyle;
    use crate::tasks::{make_env, EnvParams};

    fn toy_dataset(n: usize, rng: &mut ChaCha8Rng) -> BCDataset {
        // linearly separable: label = which of two channels is larger
        let records = (0..n)
            .map(|i| {
                let a = rng.gen::<f64>();
                let b = rng.gen::<f64>();
                BCRecord {
                    observation: vec![a, b],
                    action: (b > a) as u32,
                    episode_id: i as u32,
                    step: 0,
                }
            })
            .collect();
        BCDataset {
            env_kind: "toy".into(),
            obs_dim: 2,
            action_count: 2,
            records,
        }
    }

    #[test]
    fn renderer_is_deterministic_without_dr() {
        let env = make_env("peginsert", &EnvParams::default()).unwrap();
        let mut r = ObsRenderer::new(env.as_ref(), DrConfig::none());
        r.begin_episode(1);
        let a = r.render(env.as_ref());
        r.begin_episode(2);
        let b = r.render(env.as_ref());
        assert_eq!(a, b);
        assert_eq!(a.len(), env.render_dim());
    }

    #[test]
    fn renderer_decoys_extend_dimension_and_vary() {
        let env = make_env("peginsert", &EnvParams::default()).unwrap();
        let mut r = ObsRenderer::new(env.as_ref(), DrConfig::default());
        assert_eq!(r.obs_dim(), env.render_dim() + 8);
        r.begin_episode(1);
        let a = r.render(env.as_ref());
        r.begin_episode(2);
        let b = r.render(env.as_ref());
        assert_eq!(a.len(), r.obs_dim());
        assert_ne!(a, b);
    }

    #[test]
    fn log_softmax_of_uniform_logits() {
        let lp = log_softmax(&[0.0; 5]);
        for &v in &lp {
            assert!((v + (5.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_of_uniform_logits_is_ln_action_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = toy_dataset(64, &mut rng);
        let net = FeedForwardNet {
            sizes: vec![2, 2],
            weights: vec![vec![0.0; 4]],
            biases: vec![vec![0.0; 2]],
        };
        let loss = net.loss(&data.records);
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bc_fits_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = toy_dataset(2000, &mut rng);
        let cfg = BcOptConfig {
            hidden: vec![16],
            epochs: 60,
            ..BcOptConfig::default()
        };
        let net = train_bc(&data, &cfg, &mut rng).unwrap();
        let correct = data
            .records
            .iter()
            .filter(|r| net.predict(&r.observation) == r.action as usize)
            .count();
        let acc = correct as f64 / data.records.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = BCDataset {
            env_kind: "toy".into(),
            obs_dim: 2,
            action_count: 2,
            records: vec![],
        };
        assert!(matches!(
            train_bc(&data, &BcOptConfig::default(), &mut rng),
            Err(DistillError::EmptyDataset)
        ));
    }

    #[test]
    fn grad_check_passes_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let mut net_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = FeedForwardNet::new(&[6, 12, 4], &mut net_rng);
            let batch: Vec<BCRecord> = (0..16)
                .map(|i| BCRecord {
                    observation: (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
                    action: rng.gen_range(0..4),
                    episode_id: i,
                    step: 0,
                })
                .collect();
            let err = grad_check(&mut net, &batch, 1e-5, &mut rng);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn grad_check_catches_corrupted_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = FeedForwardNet::new(&[4, 8, 3], &mut rng);
        let batch: Vec<BCRecord> = (0..8)
            .map(|i| BCRecord {
                observation: (0..4).map(|_| rng.gen::<f64>()).collect(),
                action: rng.gen_range(0..3),
                episode_id: i,
                step: 0,
            })
            .collect();
        // fault injection: perturb one analytic weight gradient, then verify
        // the finite-difference comparison flags it
        let (_, mut gw, gb) = net.loss_and_grad(&batch);
        gw[0][0] += 0.1;
        // recompute the check inline against the corrupted analytic value
        let analytic: Vec<f64> = gw
            .iter()
            .flat_map(|v| v.iter().cloned())
            .chain(gb.iter().flat_map(|v| v.iter().cloned()))
            .collect();
        let h = 1e-5;
        let orig = net.param(0);
        net.set_param(0, orig + h);
        let plus = net.loss(&batch);
        net.set_param(0, orig - h);
        let minus = net.loss(&batch);
        net.set_param(0, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[0] - numeric).abs() / analytic[0].abs().max(numeric.abs()).max(1e-8);
        assert!(err > 1e-2, "corruption not detected: {err}");
    }

    #[test]
    fn dataset_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = toy_dataset(20, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.acds");
        data.save(&path).unwrap();
        assert_eq!(BCDataset::load(&path).unwrap(), data);
    }

    #[test]
    fn net_checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = FeedForwardNet::new(&[5, 7, 3], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.acpl");
        net.save(&path, "peginsert").unwrap();
        let (loaded, kind) = FeedForwardNet::load(&path).unwrap();
        assert_eq!(kind, "peginsert");
        assert_eq!(loaded, net);
    }

    #[test]
    fn generation_keeps_only_successes_and_stalls_on_blank_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut env = make_env("lockchain", &EnvParams::default()).unwrap();
        let blank = crate::learner::TabularPolicy::new(env.action_count(), 0.1, 0.99).publish();
        let result = generate_dataset(&blank, env.as_mut(), 120, DrConfig::none(), 0.0, &mut rng);
        assert!(matches!(result, Err(DistillError::GenerationStalled { .. })));
    }

    #[test]
    fn oracle_evaluation_curve_is_monotone_and_perfect() {
        struct OracleAgent;
        impl EvalAgent for OracleAgent {
            fn begin_episode(&mut self, _seed: u64) {}
            fn act(&mut self, env: &dyn Env) -> usize {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                env.oracle_action(OracleStyle::Optimal, &mut rng).unwrap()
            }
        }
        let mut env = make_env("lockchain", &EnvParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let report = evaluate(
            &mut OracleAgent,
            env.as_mut(),
            50,
            SettingsProfile::Nominal,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.success_rate, 1.0);
        for pair in report.success_by_step.windows(2) {
            assert!(pair[0].1 <= pair[1].1);
        }
        assert_eq!(report.success_by_step.last().unwrap().1, 1.0);
    }
}
