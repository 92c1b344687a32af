//! One meta-reasoning cycle: window the trajectory, prompt the meta
//! backend, parse the analysis and memory operations, apply them, and
//! advance the scheduler.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::TextGenerator;
use crate::error::{usage_err, Result};
use crate::memory::{apply_ops, ApplyReport, KnowledgeMemory, TrajectoryMemory};
use crate::protocol::{
    parse_meta_response_with, render_meta_ops_prompt, render_meta_prompt, MemoryOp, ParseError,
    ParseMode, Prompt,
};
use crate::scheduler::{round_half_up, SchedulerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub cycle_index: usize,
    pub fired_at: u64,
    /// Inclusive trajectory time range shown to the backend.
    pub window: (u64, u64),
    pub meta_text: String,
    pub ops: Vec<MemoryOp>,
    pub apply_report: ApplyReport,
    pub memory_size_after: usize,
    pub interval_used: f64,
    /// The backend failed; the cycle fell back to a single keep.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_skipped: Vec<ParseError>,
}

/// Prompt/response pairs of one cycle, for audit dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaExchange {
    pub cycle_index: usize,
    pub prompt: Prompt,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaCycleOutput {
    pub memory: KnowledgeMemory,
    pub scheduler: SchedulerState,
    pub record: MetaRecord,
    pub exchanges: Vec<MetaExchange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaCycleOptions {
    pub capacity: usize,
    /// Generate the analysis and the operations in separate calls.
    pub two_call: bool,
    pub temperature: f64,
    pub cycle_index: usize,
}

/// Runs one cycle at step count `t`. The window covers the last
/// `round(k)` recorded steps, `[t - round(k), t - 1]`, clamped at 0.
pub fn run_meta_cycle(
    traj: &TrajectoryMemory,
    memory: &KnowledgeMemory,
    backend: &mut dyn TextGenerator,
    scheduler: &SchedulerState,
    t: u64,
    opts: MetaCycleOptions,
) -> Result<MetaCycleOutput> {
    if traj.is_empty() {
        return Err(usage_err("meta cycle needs a nonempty trajectory"));
    }
    if t == 0 {
        return Err(usage_err("meta cycle at t=0 has no window"));
    }
    let interval_used = scheduler.k;
    let from = t.saturating_sub(round_half_up(interval_used));
    let to = t - 1;
    let mut segment = traj.segment(from, to);
    if segment.is_empty() {
        segment = traj.tail_states(1)?;
    }

    let prompt = render_meta_prompt(segment, memory, opts.capacity)?;
    let mut exchanges = Vec::new();
    let first = backend.generate(&prompt, opts.temperature);
    exchanges.push(MetaExchange {
        cycle_index: opts.cycle_index,
        prompt,
        response: first.as_ref().ok().cloned(),
    });

    let parsed = match first {
        Err(e) => {
            log::warn!("meta cycle {} degraded: {e}", opts.cycle_index);
            None
        }
        Ok(text) if !opts.two_call => Some(parse_meta_response_with(&text, ParseMode::Lenient)?),
        Ok(text) => {
            let meta = parse_meta_response_with(&text, ParseMode::Lenient)?.meta;
            let ops_prompt = render_meta_ops_prompt(segment, memory, opts.capacity, &meta)?;
            let second = backend.generate(&ops_prompt, opts.temperature);
            exchanges.push(MetaExchange {
                cycle_index: opts.cycle_index,
                prompt: ops_prompt,
                response: second.as_ref().ok().cloned(),
            });
            match second {
                Ok(ops_text) => {
                    let mut p = parse_meta_response_with(&ops_text, ParseMode::Lenient)?;
                    // The ops call carries no analysis of its own.
                    p.skipped.retain(|e| *e != ParseError::MissingMeta);
                    p.meta = meta;
                    Some(p)
                }
                Err(e) => {
                    log::warn!("meta cycle {} degraded: {e}", opts.cycle_index);
                    None
                }
            }
        }
    };

    let degraded = parsed.is_none();
    let (meta_text, ops, parse_skipped) = match parsed {
        Some(p) => (p.meta, p.ops, p.skipped),
        None => (String::new(), vec![MemoryOp::Keep], Vec::new()),
    };
    let (next_memory, apply_report) = apply_ops(memory, &ops, t);
    let mut next_sched = scheduler.clone();
    next_sched.fire(t)?;
    let record = MetaRecord {
        cycle_index: opts.cycle_index,
        fired_at: t,
        window: (segment[0].t, segment[segment.len() - 1].t),
        meta_text,
        ops,
        apply_report,
        memory_size_after: next_memory.len(),
        interval_used,
        degraded,
        parse_skipped,
    };
    Ok(MetaCycleOutput {
        memory: next_memory,
        scheduler: next_sched,
        record,
        exchanges,
    })
}

/// Re-applies every logged cycle to `initial`.
pub fn replay_meta_log(initial: &KnowledgeMemory, records: &[MetaRecord]) -> KnowledgeMemory {
    records
        .iter()
        .fold(initial.clone(), |m, r| apply_ops(&m, &r.ops, r.fired_at).0)
}

pub fn read_meta_log(path: &Path) -> Result<Vec<MetaRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
