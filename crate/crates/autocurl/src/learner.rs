//! Replay buffer and tabular Q-learner.
//!
//! Episodes are split into fixed-length trajectory snippets; each snippet is
//! sampled at most `max_uses` times and the buffer evicts oldest-first when
//! full. The policy is a table from integer observation vectors to Q-values.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::env::{Obs, Transition};
use rand::Rng;
use rand_chacha::rand_core::RngCore;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ACPL";
pub const CHECKPOINT_VERSION: u32 = 1;
const TABULAR_MODE: &str = "tabular-q";

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("replay not ready: {have} usable transitions, need {need}")]
    NotReady { have: usize, need: usize },
    #[error("checkpoint format error: {0}")]
    Format(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint holds a {0} policy, expected tabular-q")]
    WrongMode(String),
}

#[derive(Debug, Clone)]
pub struct TrajectorySnippet {
    pub id: u64,
    pub transitions: Vec<Transition>,
    pub uses: u32,
}

/// FIFO replay over trajectory snippets with a per-snippet use cap.
pub struct ReplayBuffer {
    snippets: VecDeque<TrajectorySnippet>,
    capacity: usize,
    snippet_len: usize,
    max_uses: u32,
    next_id: u64,
    usable_transitions: usize,
    episodes_pushed: u64,
    evictions: u64,
    audit: Option<HashMap<u64, u32>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, snippet_len: usize, max_uses: u32) -> Self {
        Self {
            snippets: VecDeque::new(),
            capacity: capacity.max(1),
            snippet_len: snippet_len.max(1),
            max_uses: max_uses.max(1),
            next_id: 0,
            usable_transitions: 0,
            episodes_pushed: 0,
            evictions: 0,
            audit: None,
        }
    }

    /// Records per-snippet sample counts for at-most-`max_uses` audits.
    pub fn enable_audit(&mut self) {
        self.audit = Some(HashMap::new());
    }

    pub fn audit_counts(&self) -> Option<&HashMap<u64, u32>> {
        self.audit.as_ref()
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn usable_transitions(&self) -> usize {
        self.usable_transitions
    }

    /// Splits an episode into ceil(len / snippet_len) snippets and appends
    /// them, evicting oldest snippets once capacity is exceeded.
    pub fn push_episode(&mut self, episode: Vec<Transition>) {
        if episode.is_empty() {
            return;
        }
        self.episodes_pushed += 1;
        let mut transitions = episode;
        while !transitions.is_empty() {
            let take = transitions.len().min(self.snippet_len);
            let rest = transitions.split_off(take);
            self.usable_transitions += transitions.len() * self.max_uses as usize;
            self.snippets.push_back(TrajectorySnippet {
                id: self.next_id,
                transitions,
                uses: 0,
            });
            self.next_id += 1;
            transitions = rest;
        }
        while self.snippets.len() > self.capacity {
            if let Some(old) = self.snippets.pop_front() {
                let left = (self.max_uses - old.uses) as usize * old.transitions.len();
                self.usable_transitions -= left;
                self.evictions += 1;
            }
        }
    }

    pub fn episodes_pushed(&self) -> u64 {
        self.episodes_pushed
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    /// Draws whole snippets uniformly at random until at least `batch_size`
    /// transitions are collected. Each draw consumes one use; a snippet that
    /// reaches `max_uses` is removed.
    pub fn sample_batch(
        &mut self,
        batch_size: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Transition>, LearnerError> {
        if self.usable_transitions < batch_size {
            return Err(LearnerError::NotReady {
                have: self.usable_transitions,
                need: batch_size,
            });
        }
        let mut batch = Vec::with_capacity(batch_size + self.snippet_len);
        while batch.len() < batch_size {
            let idx = rng.gen_range(0..self.snippets.len());
            let snippet = &mut self.snippets[idx];
            snippet.uses += 1;
            self.usable_transitions -= snippet.transitions.len();
            if let Some(audit) = &mut self.audit {
                *audit.entry(snippet.id).or_insert(0) += 1;
            }
            batch.extend(snippet.transitions.iter().cloned());
            if snippet.uses >= self.max_uses {
                self.snippets.remove(idx);
            }
        }
        Ok(batch)
    }

    pub fn snippet_ids(&self) -> Vec<u64> {
        self.snippets.iter().map(|s| s.id).collect()
    }
}

/// Immutable policy view handed to actors.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub version: u64,
    pub action_count: usize,
    pub table: BTreeMap<Obs, Vec<f64>>,
}

impl PolicySnapshot {
    pub fn q_values<'a>(&'a self, obs: &Obs) -> Option<&'a [f64]> {
        self.table.get(obs).map(|v| v.as_slice())
    }

    /// Greedy action: highest Q, lowest index on ties. Unseen observations
    /// resolve to action 0.
    pub fn greedy(&self, obs: &Obs) -> usize {
        match self.table.get(obs) {
            Some(q) => lowest_index_argmax(q),
            None => 0,
        }
    }

    /// Behavior action: with probability `epsilon` uniform over all actions,
    /// otherwise greedy with uniform tie-breaking among maximal Q-values.
    /// Unseen observations (all-zero Q) therefore act uniformly at random.
    pub fn act(&self, obs: &Obs, epsilon: f64, rng: &mut dyn RngCore) -> usize {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return rng.gen_range(0..self.action_count);
        }
        match self.table.get(obs) {
            Some(q) => random_tie_argmax(q, rng),
            None => rng.gen_range(0..self.action_count),
        }
    }
}

fn lowest_index_argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn random_tie_argmax(q: &[f64], rng: &mut dyn RngCore) -> usize {
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = q
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i)
        .collect();
    tied[rng.gen_range(0..tied.len())]
}

/// Tabular Q-learner with sparse binary rewards.
pub struct TabularPolicy {
    table: BTreeMap<Obs, Vec<f64>>,
    action_count: usize,
    version: u64,
    pub learning_rate: f64,
    pub discount: f64,
    /// Hyperbolic decay: the effective rate is lr / (1 + decay · batches).
    pub lr_decay: f64,
    batches_applied: u64,
}

impl TabularPolicy {
    pub fn new(action_count: usize, learning_rate: f64, discount: f64) -> Self {
        Self {
            table: BTreeMap::new(),
            action_count,
            version: 0,
            learning_rate,
            discount,
            lr_decay: 0.0,
            batches_applied: 0,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn state_count(&self) -> usize {
        self.table.len()
    }

    fn max_q(&self, obs: &Obs) -> f64 {
        self.table
            .get(obs)
            .map(|q| q.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(0.0)
    }

    /// One-step Q-learning on a batch: the bootstrap term is dropped on
    /// terminal transitions and kept on truncated ones.
    pub fn update_batch(&mut self, batch: &[Transition]) {
        let lr = self.learning_rate / (1.0 + self.lr_decay * self.batches_applied as f64);
        for t in batch {
            let bootstrap = if t.terminal {
                0.0
            } else {
                self.discount * self.max_q(&t.next_observation)
            };
            let target = t.reward as f64 + bootstrap;
            let q = self
                .table
                .entry(t.observation.clone())
                .or_insert_with(|| vec![0.0; self.action_count]);
            q[t.action] += lr * (target - q[t.action]);
        }
        self.batches_applied += 1;
        self.version += 1;
    }

    /// Freezes the current table into a shareable snapshot.
    pub fn publish(&self) -> Arc<PolicySnapshot> {
        Arc::new(PolicySnapshot {
            version: self.version,
            action_count: self.action_count,
            table: self.table.clone(),
        })
    }

    pub fn save_checkpoint(&self, path: &Path, env_kind: &str) -> Result<(), LearnerError> {
        std::fs::write(path, self.encode(env_kind))?;
        Ok(())
    }

    fn encode(&self, env_kind: &str) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_raw(CHECKPOINT_MAGIC);
        w.put_u32(CHECKPOINT_VERSION);
        w.put_str(env_kind);
        w.put_str(TABULAR_MODE);
        w.put_u32(self.action_count as u32);
        w.put_u64(self.version);
        w.put_f64(self.learning_rate);
        w.put_f64(self.discount);
        w.put_u64(self.table.len() as u64);
        for (obs, q) in &self.table {
            w.put_u32(obs.len() as u32);
            for &f in obs {
                w.put_i64(f);
            }
            for &v in q {
                w.put_f64(v);
            }
        }
        w.into_bytes()
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, String), LearnerError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn decode(bytes: &[u8]) -> Result<(Self, String), LearnerError> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let format = r.get_u32()?;
        if format != CHECKPOINT_VERSION {
            return Err(LearnerError::UnsupportedVersion(format));
        }
        let env_kind = r.get_str()?;
        let mode = r.get_str()?;
        if mode != TABULAR_MODE {
            return Err(LearnerError::WrongMode(mode));
        }
        let action_count = r.get_u32()? as usize;
        let version = r.get_u64()?;
        let learning_rate = r.get_f64()?;
        let discount = r.get_f64()?;
        let states = r.get_u64()? as usize;
        let mut table = BTreeMap::new();
        for _ in 0..states {
            let dim = r.get_u32()? as usize;
            let mut obs = Vec::with_capacity(dim);
            for _ in 0..dim {
                obs.push(r.get_i64()?);
            }
            let mut q = Vec::with_capacity(action_count);
            for _ in 0..action_count {
                q.push(r.get_f64()?);
            }
            table.insert(obs, q);
        }
        r.expect_end()?;
        Ok((
            Self {
                table,
                action_count,
                version,
                learning_rate,
                discount,
                lr_decay: 0.0,
                batches_applied: 0,
            },
            env_kind,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: i64, action: usize, reward: u8, terminal: bool) -> Transition {
        Transition {
            observation: vec![tag],
            action,
            reward,
            terminal,
            truncated: false,
            next_observation: vec![tag + 1],
        }
    }

    fn episode(len: usize) -> Vec<Transition> {
        (0..len).map(|i| transition(i as i64, 0, 0, false)).collect()
    }

    #[test]
    fn episode_splits_into_snippets() {
        let mut buf = ReplayBuffer::new(100, 10, 2);
        buf.push_episode(episode(23));
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.usable_transitions(), 23 * 2);
        let lens: Vec<usize> = buf
            .snippets
            .iter()
            .map(|s| s.transitions.len())
            .collect();
        assert_eq!(lens, vec![10, 10, 3]);
    }

    #[test]
    fn fifo_eviction_drops_oldest() {
        let mut buf = ReplayBuffer::new(3, 10, 2);
        for _ in 0..5 {
            buf.push_episode(episode(10));
        }
        assert_eq!(buf.snippet_ids(), vec![2, 3, 4]);
        assert_eq!(buf.usable_transitions(), 3 * 10 * 2);
    }

    #[test]
    fn max_uses_removes_snippet() {
        let mut buf = ReplayBuffer::new(10, 10, 2);
        buf.enable_audit();
        buf.push_episode(episode(10));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        buf.sample_batch(10, &mut rng).unwrap();
        assert_eq!(buf.len(), 1);
        buf.sample_batch(10, &mut rng).unwrap();
        assert!(buf.is_empty());
        assert_eq!(buf.usable_transitions(), 0);
        assert!(matches!(
            buf.sample_batch(1, &mut rng),
            Err(LearnerError::NotReady { .. })
        ));
        assert_eq!(buf.audit_counts().unwrap()[&0], 2);
    }

    #[test]
    fn audit_never_exceeds_max_uses() {
        let mut buf = ReplayBuffer::new(50, 10, 2);
        buf.enable_audit();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            buf.push_episode(episode(17));
        }
        while buf.usable_transitions() >= 32 {
            buf.sample_batch(32, &mut rng).unwrap();
        }
        for (&id, &count) in buf.audit_counts().unwrap() {
            assert!(count <= 2, "snippet {id} sampled {count} times");
        }
    }

    #[test]
    fn greedy_breaks_ties_by_lowest_index() {
        let mut policy = TabularPolicy::new(3, 0.1, 0.99);
        policy.update_batch(&[transition(0, 2, 0, false)]);
        let snap = policy.publish();
        assert_eq!(snap.greedy(&vec![0]), 0);
        assert_eq!(snap.greedy(&vec![99]), 0);
    }

    #[test]
    fn explore_ties_are_uniform() {
        let policy = TabularPolicy::new(4, 0.1, 0.99);
        let snap = policy.publish();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0u32; 4];
        for _ in 0..4000 {
            counts[snap.act(&vec![0], 0.0, &mut rng)] += 1;
        }
        for &c in &counts {
            assert!((800..1200).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn q_learning_solves_two_step_chain() {
        // states 0 -> 1 -> terminal reward; action 0 advances, action 1 wastes
        let mut policy = TabularPolicy::new(2, 0.5, 0.9);
        let good = vec![
            transition(0, 0, 0, false),
            transition(1, 0, 1, true),
        ];
        let bad = vec![transition(0, 1, 0, false), transition(1, 1, 0, false)];
        for _ in 0..200 {
            policy.update_batch(&good);
            policy.update_batch(&bad);
        }
        let snap = policy.publish();
        assert_eq!(snap.greedy(&vec![0]), 0);
        assert_eq!(snap.greedy(&vec![1]), 0);
        let q1 = snap.q_values(&vec![1]).unwrap();
        assert!((q1[0] - 1.0).abs() < 1e-6);
        let q0 = snap.q_values(&vec![0]).unwrap();
        assert!((q0[0] - 0.9).abs() < 1e-6, "q0 = {q0:?}");
    }

    #[test]
    fn terminal_drops_bootstrap_truncated_keeps_it() {
        let mut policy = TabularPolicy::new(1, 1.0, 0.5);
        // give the successor state value 1
        policy.update_batch(&[transition(1, 0, 1, true)]);
        let mut term = transition(0, 0, 0, true);
        term.next_observation = vec![1];
        policy.update_batch(&[term]);
        assert_eq!(policy.publish().q_values(&vec![0]).unwrap()[0], 0.0);

        let mut policy = TabularPolicy::new(1, 1.0, 0.5);
        policy.update_batch(&[transition(1, 0, 1, true)]);
        let mut trunc = transition(0, 0, 0, false);
        trunc.truncated = true;
        trunc.next_observation = vec![1];
        policy.update_batch(&[trunc]);
        assert_eq!(policy.publish().q_values(&vec![0]).unwrap()[0], 0.5);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let mut policy = TabularPolicy::new(3, 0.1, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..20 {
            policy.update_batch(&[transition(i, rng.gen_range(0..3), (i % 2) as u8, i % 5 == 0)]);
        }
        let bytes = policy.encode("lockchain");
        let (restored, kind) = TabularPolicy::decode(&bytes).unwrap();
        assert_eq!(kind, "lockchain");
        assert_eq!(restored.version, policy.version);
        assert_eq!(restored.encode("lockchain"), bytes);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let policy = TabularPolicy::new(2, 0.1, 0.99);
        let mut bytes = policy.encode("x");
        bytes[0] = b'Z';
        assert!(matches!(
            TabularPolicy::decode(&bytes),
            Err(LearnerError::Format(_))
        ));
    }
}
