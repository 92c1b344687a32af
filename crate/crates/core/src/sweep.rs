//! Seed sweeps over ablation modes.

use std::fmt::Write as _;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::agent::{run, RunReport};
use crate::config::{Ablation, RunConfig};
use crate::error::Result;
use crate::stats::{paired_one_sided, PairedTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub ablation: Ablation,
    /// Total return per seed, in seed order.
    pub returns: Vec<f64>,
    /// First and last RL-round metrics per seed (absent without rounds).
    pub first_round: Vec<Option<(f64, f64)>>,
    pub last_round: Vec<Option<(f64, f64)>>,
}

impl MethodResult {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    pub fn max(&self) -> f64 {
        self.returns
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodResult>,
}

impl SweepResult {
    pub fn method(&self, a: Ablation) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.ablation == a)
    }

    /// Paired one-sided test of `a > b` over seeds.
    pub fn compare(&self, a: Ablation, b: Ablation) -> Option<PairedTest> {
        let (x, y) = (self.method(a)?, self.method(b)?);
        paired_one_sided(&x.returns, &y.returns).ok()
    }

    /// A plain-text score table, one row per method.
    pub fn table(&self, game: &str) -> String {
        let mut out = format!(
            "game: {game}, seeds: {}\n{:<14}{:>12}{:>12}{:>12}\n",
            self.seeds.len(),
            "method",
            "mean",
            "max",
            "p(full>)"
        );
        for m in &self.methods {
            let p = if m.ablation == Ablation::Full {
                "-".to_string()
            } else {
                self.compare(Ablation::Full, m.ablation)
                    .map_or("-".into(), |t| format!("{:.4}", t.p_value))
            };
            let _ = writeln!(
                out,
                "{:<14}{:>12.2}{:>12.2}{:>12}",
                m.ablation.as_str(),
                m.mean(),
                m.max(),
                p
            );
        }
        out
    }
}

fn round_metrics(r: &RunReport, last: bool) -> Option<(f64, f64)> {
    let t = if last {
        r.train_reports.last()
    } else {
        r.train_reports.first()
    }?;
    Some((t.mean_majority_ratio, t.agreement_ratio))
}

/// Runs every `(ablation, seed)` pair, in parallel across seeds.
pub fn sweep(base: &RunConfig, seeds: &[u64], ablations: &[Ablation]) -> Result<SweepResult> {
    let jobs: Vec<(Ablation, u64)> = ablations
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let mut results: Vec<Option<Result<RunReport>>> = (0..jobs.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..jobs.len()).step_by(workers).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                let jobs = &jobs;
                scope.spawn(move || {
                    idx.into_iter()
                        .map(|i| {
                            let (a, s) = jobs[i];
                            let cfg = base.clone().with_seed(s).with_ablation(a);
                            (i, run(&cfg))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sweep worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut reports = results.into_iter().map(|r| r.expect("every job ran"));
    let mut methods = Vec::new();
    for &a in ablations {
        let mut m = MethodResult {
            ablation: a,
            returns: Vec::new(),
            first_round: Vec::new(),
            last_round: Vec::new(),
        };
        for _ in seeds {
            let r = reports.next().expect("one report per job")?;
            m.returns.push(r.total_return);
            m.first_round.push(round_metrics(&r, false));
            m.last_round.push(round_metrics(&r, true));
        }
        methods.push(m);
    }
    Ok(SweepResult {
        seeds: seeds.to_vec(),
        methods,
    })
}
