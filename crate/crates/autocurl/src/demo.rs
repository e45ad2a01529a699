//! Demonstration recording, persistence, and chunked start-state sampling.
//!
//! Demonstrations are sequences of full-state snapshots; the curriculum only
//! ever uses the snapshots, never the recorded actions, so partial or
//! foreign-action-space demos are first-class citizens.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::env::{Env, EnvError, GoalSpec, OracleStyle, SampleMode, StateSnapshot, TaskParams};
use rand::Rng;
use rand_chacha::rand_core::RngCore;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"ACDM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("demo format error: {0}")]
    Format(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported demo format version {0}")]
    UnsupportedVersion(u32),
    #[error("env kind mismatch: demo set is for {set}, target env is {env}")]
    EnvKindMismatch { set: String, env: String },
    #[error("invalid demo: {0}")]
    InvalidDemo(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// An ordered snapshot sequence with metadata. `actions` may be absent or in
/// a foreign action space; nothing downstream depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub demo_id: String,
    pub env_kind: String,
    pub snapshots: Vec<StateSnapshot>,
    pub actions: Option<Vec<u32>>,
    pub success: bool,
    pub goal: Option<GoalSpec>,
    pub metadata: Vec<(String, String)>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        if self.snapshots.is_empty() {
            return Err(DemoError::InvalidDemo("demo must have L >= 1 snapshots".into()));
        }
        if let Some(actions) = &self.actions {
            if actions.len() != self.snapshots.len() {
                return Err(DemoError::InvalidDemo(format!(
                    "actions length {} != snapshot length {}",
                    actions.len(),
                    self.snapshots.len()
                )));
            }
        }
        for s in &self.snapshots {
            if s.env_kind != self.env_kind {
                return Err(DemoError::InvalidDemo(format!(
                    "snapshot kind {} inside {} demo",
                    s.env_kind, self.env_kind
                )));
            }
        }
        Ok(())
    }
}

/// Demonstrations sharing one env kind; immutable after load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Demonstration>,
}

impl DemoSet {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self, DemoError> {
        if let Some(first) = demos.first() {
            for d in &demos {
                if d.env_kind != first.env_kind {
                    return Err(DemoError::EnvKindMismatch {
                        set: first.env_kind.clone(),
                        env: d.env_kind.clone(),
                    });
                }
                d.validate()?;
            }
        }
        Ok(Self { demos })
    }

    pub fn env_kind(&self) -> Option<&str> {
        self.demos.first().map(|d| d.env_kind.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn check_env(&self, env: &dyn Env) -> Result<(), DemoError> {
        match self.env_kind() {
            Some(kind) if kind != env.kind() => Err(DemoError::EnvKindMismatch {
                set: kind.to_string(),
                env: env.kind().to_string(),
            }),
            _ => Ok(()),
        }
    }
}

/// Runs the scripted controller for one episode from a target start and
/// records a snapshot at every time step including the initial state.
/// Demonstrations are clean: slip and perturbations are disabled while
/// recording. Controller failure ends the episode; the demo is kept with
/// success=false.
pub fn record_demo(
    env: &mut dyn Env,
    style: OracleStyle,
    demo_id: &str,
    rng: &mut dyn RngCore,
) -> Result<Demonstration, DemoError> {
    let mut tp = env.sample_target_tp(SampleMode::Training, rng);
    tp.settings.slip_probability = 0.0;
    tp.settings.perturbation_rate = 0.0;
    record_demo_from(env, &tp, style, demo_id, rng)
}

/// Same as [`record_demo`] but from a caller-supplied start.
pub fn record_demo_from(
    env: &mut dyn Env,
    tp: &TaskParams,
    style: OracleStyle,
    demo_id: &str,
    rng: &mut dyn RngCore,
) -> Result<Demonstration, DemoError> {
    env.reset_with(tp, rng)?;
    let mut snapshots = vec![env.snapshot()];
    let mut actions = Vec::new();
    let mut success = false;
    while !env.episode_finished() {
        let action = match env.oracle_action(style, rng) {
            Ok(a) => a,
            Err(EnvError::OracleStuck(_)) => break,
            Err(e) => return Err(e.into()),
        };
        let t = env.step(action)?;
        actions.push(t.action as u32);
        snapshots.push(env.snapshot());
        if t.reward == 1 {
            success = true;
        }
    }
    Ok(Demonstration {
        demo_id: demo_id.to_string(),
        env_kind: env.kind().to_string(),
        snapshots,
        actions: Some(pad_actions(actions)),
        success,
        goal: tp.goal,
        metadata: vec![("style".into(), format!("{style:?}"))],
    })
}

// actions run one short of snapshots (no action leaves the final state);
// pad with a sentinel so the parallel-list invariant holds
fn pad_actions(mut actions: Vec<u32>) -> Vec<u32> {
    actions.push(u32::MAX);
    actions
}

/// One start state per temporal chunk: snapshot indices are partitioned into
/// `min(k, L)` contiguous chunks with sizes differing by at most one, one
/// index is drawn uniformly from each chunk, and the output is ordered by
/// chunk index ascending (earliest demo states first).
pub fn chunk_sample(
    demo: &Demonstration,
    k: usize,
    rng: &mut dyn RngCore,
) -> Vec<(StateSnapshot, usize, usize)> {
    let l = demo.len();
    if l == 0 {
        return Vec::new();
    }
    let k_eff = k.max(1).min(l);
    let mut out = Vec::with_capacity(k_eff);
    for chunk in 0..k_eff {
        let lo = chunk * l / k_eff;
        let hi = (chunk + 1) * l / k_eff;
        let idx = if hi - lo <= 1 { lo } else { rng.gen_range(lo..hi) };
        out.push((demo.snapshots[idx].clone(), idx, chunk));
    }
    out
}

fn encode_demoset(set: &DemoSet) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_raw(MAGIC);
    w.put_u32(FORMAT_VERSION);
    w.put_str(set.env_kind().unwrap_or(""));
    w.put_u32(set.demos.len() as u32);
    for d in &set.demos {
        w.put_str(&d.demo_id);
        w.put_bool(d.success);
        match d.goal {
            Some(GoalSpec(g)) => {
                w.put_bool(true);
                w.put_i64(g);
            }
            None => w.put_bool(false),
        }
        match &d.actions {
            Some(actions) => {
                w.put_bool(true);
                w.put_u32(actions.len() as u32);
                for &a in actions {
                    w.put_u32(a);
                }
            }
            None => w.put_bool(false),
        }
        w.put_u32(d.metadata.len() as u32);
        for (key, value) in &d.metadata {
            w.put_str(key);
            w.put_str(value);
        }
        w.put_u32(d.snapshots.len() as u32);
        for s in &d.snapshots {
            s.encode(&mut w);
        }
    }
    w.into_bytes()
}

fn decode_demoset(bytes: &[u8]) -> Result<DemoSet, DemoError> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.get_u32()?;
    if version != FORMAT_VERSION {
        return Err(DemoError::UnsupportedVersion(version));
    }
    let env_kind = r.get_str()?;
    let count = r.get_u32()? as usize;
    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        let demo_id = r.get_str()?;
        let success = r.get_bool()?;
        let goal = if r.get_bool()? {
            Some(GoalSpec(r.get_i64()?))
        } else {
            None
        };
        let actions = if r.get_bool()? {
            let n = r.get_u32()? as usize;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(r.get_u32()?);
            }
            Some(v)
        } else {
            None
        };
        let meta_count = r.get_u32()? as usize;
        let mut metadata = Vec::with_capacity(meta_count);
        for _ in 0..meta_count {
            metadata.push((r.get_str()?, r.get_str()?));
        }
        let snap_count = r.get_u32()? as usize;
        let mut snapshots = Vec::with_capacity(snap_count);
        for _ in 0..snap_count {
            snapshots.push(StateSnapshot::decode(&mut r)?);
        }
        demos.push(Demonstration {
            demo_id,
            env_kind: env_kind.clone(),
            snapshots,
            actions,
            success,
            goal,
            metadata,
        });
    }
    r.expect_end()?;
    DemoSet::new(demos)
}

pub fn save_demoset(path: &Path, set: &DemoSet) -> Result<(), DemoError> {
    std::fs::write(path, encode_demoset(set))?;
    Ok(())
}

pub fn load_demoset(path: &Path) -> Result<DemoSet, DemoError> {
    let bytes = std::fs::read(path)?;
    decode_demoset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_env, EnvParams};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_demo(rng: &mut ChaCha8Rng) -> Demonstration {
        let mut env = make_env("lockchain", &EnvParams::default()).unwrap();
        record_demo(env.as_mut(), OracleStyle::Optimal, "d0", rng).unwrap()
    }

    #[test]
    fn oracle_demo_has_n_plus_one_snapshots_and_success() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = chain_demo(&mut rng);
        assert_eq!(d.len(), 21);
        assert!(d.success);
        d.validate().unwrap();
    }

    #[test]
    fn partial_demo_is_kept_with_success_false() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut env = make_env("lockchain", &EnvParams::default()).unwrap();
        let d = record_demo(env.as_mut(), OracleStyle::Partial, "p0", &mut rng).unwrap();
        assert!(!d.success);
        assert!(d.len() > 1);
        DemoSet::new(vec![d]).unwrap();
    }

    #[test]
    fn chunk_sample_even_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = chain_demo(&mut rng);
        d.snapshots.truncate(8);
        for _ in 0..50 {
            let picks = chunk_sample(&d, 4, &mut rng);
            assert_eq!(picks.len(), 4);
            let bounds = [(0, 2), (2, 4), (4, 6), (6, 8)];
            for (i, (_, idx, chunk)) in picks.iter().enumerate() {
                assert_eq!(*chunk, i);
                assert!(*idx >= bounds[i].0 && *idx < bounds[i].1);
            }
        }
    }

    #[test]
    fn chunk_sample_short_demo_caps_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = chain_demo(&mut rng);
        d.snapshots.truncate(3);
        let picks = chunk_sample(&d, 8, &mut rng);
        let idx: Vec<usize> = picks.iter().map(|p| p.1).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        d.snapshots.truncate(1);
        let picks = chunk_sample(&d, 5, &mut rng);
        assert_eq!(picks.len(), 1);
        assert_eq!(picks[0].1, 0);
    }

    #[test]
    fn chunk_sample_indices_strictly_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = chain_demo(&mut rng);
        for k in 1..=12 {
            let picks = chunk_sample(&d, k, &mut rng);
            for pair in picks.windows(2) {
                assert!(pair[0].1 < pair[1].1);
            }
        }
    }

    #[test]
    fn chunk_sample_eventually_covers_every_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = chain_demo(&mut rng);
        let mut hit = vec![false; d.len()];
        for _ in 0..2000 {
            for (_, idx, _) in chunk_sample(&d, 8, &mut rng) {
                hit[idx] = true;
            }
        }
        assert!(hit.iter().all(|&h| h), "uncovered indices: {hit:?}");
    }

    #[test]
    fn demoset_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let demos: Vec<_> = (0..5).map(|_| chain_demo(&mut rng)).collect();
        let set = DemoSet::new(demos).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.acdm");
        save_demoset(&path, &set).unwrap();
        let loaded = load_demoset(&path).unwrap();
        assert_eq!(loaded, set);
    }

    #[test]
    fn truncated_file_reports_format_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = DemoSet::new(vec![chain_demo(&mut rng)]).unwrap();
        let mut bytes = encode_demoset(&set);
        bytes.truncate(bytes.len() - 10);
        match decode_demoset(&bytes) {
            Err(DemoError::Format(e)) => assert!(e.offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn kind_mismatch_detected_at_use_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = DemoSet::new(vec![chain_demo(&mut rng)]).unwrap();
        let env = make_env("peginsert", &EnvParams::default()).unwrap();
        assert!(matches!(
            set.check_env(env.as_ref()),
            Err(DemoError::EnvKindMismatch { .. })
        ));
    }

    #[test]
    fn demo_snapshot_restores_to_recorded_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = chain_demo(&mut rng);
        let mut env = make_env("lockchain", &EnvParams::default()).unwrap();
        let tp = crate::env::TaskParams {
            start: crate::env::StartState::DemoState(d.snapshots[12].clone()),
            settings: crate::env::EnvSettings::nominal(150),
            goal: None,
            provenance: crate::env::Provenance::Demo {
                demo_id: "d0".into(),
                step_index: 12,
                chunk_index: 0,
            },
            difficulty: None,
        };
        let obs = env.reset_with(&tp, &mut rng).unwrap();
        assert_eq!(obs, vec![12]);
    }
}
