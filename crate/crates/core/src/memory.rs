//! Knowledge memory (capacity-bounded natural-language rules addressed by
//! display index) and trajectory memory (append-only experience log).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{render_propositions, ActionId, GameState};
use crate::error::{usage_err, Result};
use crate::protocol::MemoryOp;

pub const DEFAULT_CAPACITY: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    /// Creation counter, strictly increasing across the run.
    pub id: u64,
    pub text: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OpOutcome {
    Added { id: u64, index: usize },
    Deleted { id: u64, index: usize },
    Kept,
    CapacityRejected,
    DuplicateRejected,
    EmptyRejected,
    BadIndex { index: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub outcomes: Vec<OpOutcome>,
}

impl ApplyReport {
    pub fn count(&self, pred: impl Fn(&OpOutcome) -> bool) -> usize {
        self.outcomes.iter().filter(|o| pred(o)).count()
    }
}

/// Ordered rule list. The display index of an entry is its list position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeMemory {
    entries: Vec<KnowledgeEntry>,
    capacity: usize,
    next_id: u64,
}

impl Default for KnowledgeMemory {
    fn default() -> Self {
        KnowledgeMemory::new(DEFAULT_CAPACITY)
    }
}

impl KnowledgeMemory {
    pub fn new(capacity: usize) -> Self {
        KnowledgeMemory {
            entries: Vec::new(),
            capacity,
            next_id: 0,
        }
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Applies `ops` left to right against the evolving list. Failures are
    /// recorded in the report and never abort the sequence.
    pub fn apply(&mut self, ops: &[MemoryOp], now: u64) -> ApplyReport {
        let mut report = ApplyReport::default();
        for op in ops {
            let outcome = match op {
                MemoryOp::Keep => OpOutcome::Kept,
                MemoryOp::Delete(index) => {
                    if *index < self.entries.len() {
                        let e = self.entries.remove(*index);
                        OpOutcome::Deleted {
                            id: e.id,
                            index: *index,
                        }
                    } else {
                        OpOutcome::BadIndex { index: *index }
                    }
                }
                MemoryOp::Add(text) => {
                    let text = text.trim();
                    if text.is_empty() {
                        OpOutcome::EmptyRejected
                    } else if self.entries.iter().any(|e| e.text == text) {
                        OpOutcome::DuplicateRejected
                    } else if self.entries.len() >= self.capacity {
                        OpOutcome::CapacityRejected
                    } else {
                        let id = self.next_id;
                        self.next_id += 1;
                        self.entries.push(KnowledgeEntry {
                            id,
                            text: text.to_string(),
                            created_at: now,
                        });
                        OpOutcome::Added {
                            id,
                            index: self.entries.len() - 1,
                        }
                    }
                }
            };
            report.outcomes.push(outcome);
        }
        report
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("memory serializes")
    }

    /// Writes `memory_<step>.json` into `dir` and returns its path.
    pub fn save_snapshot(&self, dir: &Path, step: u64) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("memory_{step:06}.json"));
        fs::write(&path, self.to_json())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Functional form of [`KnowledgeMemory::apply`].
pub fn apply_ops(
    memory: &KnowledgeMemory,
    ops: &[MemoryOp],
    now: u64,
) -> (KnowledgeMemory, ApplyReport) {
    let mut next = memory.clone();
    let report = next.apply(ops, now);
    (next, report)
}

/// Scene text plus the full frame stack it was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDigest {
    pub scene: String,
    pub state: GameState,
}

impl StateDigest {
    pub fn of(state: &GameState) -> Self {
        StateDigest {
            scene: render_propositions(state),
            state: state.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub illegal_action: bool,
    pub parse_fallback: bool,
}

/// One `(s, a, r_env, r_self, s')` experience tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: u64,
    pub state: StateDigest,
    pub action: ActionId,
    pub r_env: f64,
    pub r_self: Option<f64>,
    pub next_state: StateDigest,
    #[serde(default)]
    pub flags: StepFlags,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMemory {
    steps: Vec<TrajectoryStep>,
}

impl TrajectoryMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectoryStep> {
        self.steps.last()
    }

    pub fn append_step(&mut self, step: TrajectoryStep) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if step.t <= last.t {
                return Err(usage_err(format!(
                    "trajectory step t={} does not follow t={}",
                    step.t, last.t
                )));
            }
        }
        if let Some(r) = step.r_self {
            if !(0.0..=1.0).contains(&r) {
                return Err(usage_err(format!("r_self {r} outside [0, 1]")));
            }
        }
        self.steps.push(step);
        Ok(())
    }

    /// Steps with `from_t <= t <= to_t`, in order.
    pub fn segment(&self, from_t: u64, to_t: u64) -> &[TrajectoryStep] {
        if from_t > to_t {
            return &[];
        }
        let lo = self.steps.partition_point(|s| s.t < from_t);
        let hi = self.steps.partition_point(|s| s.t <= to_t);
        &self.steps[lo..hi]
    }

    /// The last `min(n, len)` steps.
    pub fn tail_states(&self, n: usize) -> Result<&[TrajectoryStep]> {
        if n == 0 {
            return Err(usage_err("tail_states needs n >= 1"));
        }
        Ok(&self.steps[self.steps.len().saturating_sub(n)..])
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut traj = TrajectoryMemory::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            traj.append_step(serde_json::from_str(&line)?)?;
        }
        Ok(traj)
    }
}

/// Appends one JSON value per line to a file.
pub struct JsonlWriter {
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(JsonlWriter {
            inner: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, value)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, GameId, GameSpec};

    fn mem(texts: &[&str]) -> KnowledgeMemory {
        let mut m = KnowledgeMemory::new(DEFAULT_CAPACITY);
        let ops: Vec<_> = texts.iter().map(|t| MemoryOp::Add(t.to_string())).collect();
        m.apply(&ops, 0);
        m
    }

    fn texts(m: &KnowledgeMemory) -> Vec<&str> {
        m.texts().collect()
    }

    #[test]
    fn delete_shifts_later_indices() {
        let (m, _) = apply_ops(&mem(&["A", "B", "C"]), &[MemoryOp::Delete(1)], 1);
        assert_eq!(texts(&m), ["A", "C"]);
    }

    #[test]
    fn delete_then_add_is_the_update_idiom() {
        let (m, r) = apply_ops(
            &mem(&["A", "B"]),
            &[MemoryOp::Delete(0), MemoryOp::Add("A2".into())],
            1,
        );
        assert_eq!(texts(&m), ["B", "A2"]);
        assert!(matches!(r.outcomes[1], OpOutcome::Added { index: 1, .. }));
    }

    #[test]
    fn full_memory_rejects_adds() {
        let names: Vec<String> = (0..20).map(|i| format!("rule {i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let full = mem(&refs);
        assert_eq!(full.len(), 20);
        let (m, r) = apply_ops(&full, &[MemoryOp::Add("X".into())], 5);
        assert_eq!(m, full);
        assert_eq!(r.outcomes, vec![OpOutcome::CapacityRejected]);
    }

    #[test]
    fn keep_is_a_no_op() {
        let before = mem(&["A"]);
        let (m, r) = apply_ops(&before, &[MemoryOp::Keep], 3);
        assert_eq!(m, before);
        assert_eq!(r.outcomes, vec![OpOutcome::Kept]);
    }

    #[test]
    fn duplicates_and_bad_indices_are_recorded() {
        let (m, r) = apply_ops(
            &mem(&["A"]),
            &[
                MemoryOp::Add(" A ".into()),
                MemoryOp::Delete(4),
                MemoryOp::Add("B".into()),
            ],
            2,
        );
        assert_eq!(texts(&m), ["A", "B"]);
        assert_eq!(
            r.outcomes[..2],
            [
                OpOutcome::DuplicateRejected,
                OpOutcome::BadIndex { index: 4 }
            ]
        );
    }

    #[test]
    fn repeated_delete_zero_removes_a_prefix() {
        let (m, _) = apply_ops(
            &mem(&["A", "B", "C"]),
            &[MemoryOp::Delete(0), MemoryOp::Delete(0)],
            1,
        );
        assert_eq!(texts(&m), ["C"]);
    }

    #[test]
    fn ids_keep_increasing_after_deletes() {
        let mut m = mem(&["A", "B"]);
        m.apply(&[MemoryOp::Delete(1), MemoryOp::Add("C".into())], 4);
        let ids: Vec<u64> = m.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, [0, 2]);
        assert_eq!(m.entries()[1].created_at, 4);
    }

    fn step(t: u64) -> TrajectoryStep {
        let s = reset(&GameSpec::new(GameId::Dodger), 0).unwrap();
        TrajectoryStep {
            t,
            state: StateDigest::of(&s),
            action: ActionId::NOOP,
            r_env: 0.0,
            r_self: None,
            next_state: StateDigest::of(&s),
            flags: StepFlags::default(),
        }
    }

    #[test]
    fn append_requires_increasing_t() {
        let mut traj = TrajectoryMemory::new();
        traj.append_step(step(0)).unwrap();
        assert_eq!(traj.len(), 1);
        traj.append_step(step(5)).unwrap();
        assert!(matches!(
            traj.append_step(step(5)),
            Err(crate::Error::Usage(_))
        ));
    }

    #[test]
    fn r_self_must_be_a_ratio() {
        let mut traj = TrajectoryMemory::new();
        let mut s = step(0);
        s.r_self = Some(1.5);
        assert!(traj.append_step(s).is_err());
    }

    #[test]
    fn segment_and_tail() {
        let mut traj = TrajectoryMemory::new();
        for t in 0..10 {
            traj.append_step(step(t)).unwrap();
        }
        assert_eq!(traj.segment(7, 9).len(), 3);
        assert!(traj.segment(50, 60).is_empty());
        let window = traj.segment(9 - 3, 9);
        assert_eq!(window.first().unwrap().t, 6);
        assert_eq!(traj.tail_states(1).unwrap()[0].t, 9);
        assert_eq!(traj.tail_states(100).unwrap().len(), 10);
        assert!(traj.tail_states(0).is_err());
    }

    #[test]
    fn tail_of_long_trajectory() {
        let mut traj = TrajectoryMemory::new();
        for t in 0..250 {
            traj.append_step(step(t)).unwrap();
        }
        let tail = traj.tail_states(100).unwrap();
        assert_eq!((tail[0].t, tail[99].t), (150, 249));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut traj = TrajectoryMemory::new();
        for t in 0..4 {
            traj.append_step(step(t)).unwrap();
        }
        let path = dir.path().join("trajectory.jsonl");
        traj.write_jsonl(&path).unwrap();
        assert_eq!(TrajectoryMemory::read_jsonl(&path).unwrap(), traj);
    }
}
