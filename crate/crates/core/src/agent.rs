//! The orchestration loop: act, record, run meta cycles when due, and run a
//! test-time RL round every `mctrl_interval` steps.
//!
//! Time `n` counts completed environment steps. The step taken from state
//! `s_n` is recorded with `t = n`; meta cycles and RL rounds are checked
//! after each step against the new count, meta cycle first.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::TextGenerator;
use crate::config::{Ablation, RunConfig, Seeds, STREAM_ACT, STREAM_MCTRL};
use crate::env::{ActionId, Environment, GameId, GameState};
use crate::error::Result;
use crate::mctrl::vote;
use crate::mctrl::{grpo_round, TrainReport};
use crate::memory::{
    JsonlWriter, KnowledgeMemory, StateDigest, StepFlags, TrajectoryMemory, TrajectoryStep,
};
use crate::metareason::{run_meta_cycle, MetaCycleOptions, MetaRecord};
use crate::policy::{sample_candidates, ActionBackend, CandidateResponse, PolicyRng};

/// How executed actions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActConfig {
    pub online_vote: bool,
    pub k_act: usize,
    pub vote_temperature: f64,
    /// Single-sample temperature when voting is off; `<= 0` is greedy.
    pub act_temperature: f64,
}

impl ActConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        ActConfig {
            online_vote: cfg.policy.online_vote,
            k_act: cfg.policy.k_act,
            vote_temperature: cfg.policy.vote_temperature,
            act_temperature: cfg.policy.act_temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub action: ActionId,
    /// Majority ratio of the online vote.
    pub r_self: Option<f64>,
    pub candidates: Vec<CandidateResponse>,
    /// No candidate parsed; NOOP was executed instead.
    pub parse_fallback: bool,
}

pub fn select_action(
    state: &GameState,
    memory: &KnowledgeMemory,
    backend: &mut ActionBackend,
    cfg: &ActConfig,
    rng: &mut PolicyRng,
) -> Result<Selection> {
    let (k, temperature) = if cfg.online_vote {
        (cfg.k_act, cfg.vote_temperature)
    } else {
        (1, cfg.act_temperature)
    };
    let candidates = sample_candidates(backend, state, memory, k, temperature, rng)?;
    let actions: Vec<Option<ActionId>> = candidates.iter().map(|c| c.action).collect();
    let voted = vote(&actions);
    let (action, r_self, parse_fallback) = match voted {
        Ok((a, ratio)) => (a, cfg.online_vote.then_some(ratio), false),
        Err(_) => (ActionId::NOOP, None, true),
    };
    Ok(Selection {
        action,
        r_self,
        candidates,
        parse_fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub game: GameId,
    pub ablation: Ablation,
    pub seeds: Seeds,
    pub steps: u64,
    /// Sum of every environment reward in the run.
    pub total_return: f64,
    /// Returns of finished episodes, in order.
    pub episode_returns: Vec<f64>,
    /// Return accumulated by the episode still running at the end.
    pub unfinished_return: f64,
    pub meta_cycles: usize,
    pub mctrl_rounds: usize,
    pub param_delta_total: f64,
    pub illegal_actions: usize,
    pub parse_fallbacks: usize,
    pub final_memory: KnowledgeMemory,
    pub train_reports: Vec<TrainReport>,
    /// Artifact file names, relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    /// Mean of finished episodes, or the unfinished return if none ended.
    pub fn mean_episode_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            self.unfinished_return
        } else {
            self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
        }
    }
}

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const META_LOG_FILE: &str = "meta_log.jsonl";
pub const META_DUMP_FILE: &str = "meta_dump.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MEMORY_DIR: &str = "memory";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record meta prompt/response pairs.
    pub dump_meta: bool,
}

struct Sinks {
    dir: PathBuf,
    trajectory: JsonlWriter,
    meta_log: JsonlWriter,
    meta_dump: Option<JsonlWriter>,
    metrics: BufWriter<File>,
}

/// The agent's mutable state across one run.
pub struct Agent {
    cfg: RunConfig,
    env: Environment,
    policy: ActionBackend,
    meta_backend: Option<Box<dyn TextGenerator>>,
    memory: KnowledgeMemory,
    traj: TrajectoryMemory,
    scheduler: crate::scheduler::SchedulerState,
    act_rng: PolicyRng,
    mctrl_rng: PolicyRng,
    meta_records: Vec<MetaRecord>,
    train_reports: Vec<TrainReport>,
    episode_returns: Vec<f64>,
    illegal_actions: usize,
    parse_fallbacks: usize,
}

impl Agent {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let meta_backend = if cfg.ablation().meta_enabled() {
            Some(cfg.meta_backend()?)
        } else {
            None
        };
        Self::with_backends(cfg.clone(), cfg.action_backend()?, meta_backend)
    }

    /// Uses caller-supplied backends instead of building them from the
    /// configuration.
    pub fn with_backends(
        cfg: RunConfig,
        policy: ActionBackend,
        meta_backend: Option<Box<dyn TextGenerator>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.ablation().rl_enabled() && policy.as_toy().is_none() {
            return Err(crate::error::config_err(
                "test-time RL needs the toy policy; use ablation no_rl or no_mr_no_rl with text backends",
            ));
        }
        let env = Environment::new(cfg.game_spec()?, cfg.seeds().env)?;
        Ok(Agent {
            env,
            policy,
            meta_backend,
            memory: KnowledgeMemory::new(cfg.memory.capacity),
            traj: TrajectoryMemory::new(),
            scheduler: cfg.scheduler_state()?,
            act_rng: cfg.policy_rng(STREAM_ACT),
            mctrl_rng: cfg.policy_rng(STREAM_MCTRL),
            meta_records: Vec::new(),
            train_reports: Vec::new(),
            episode_returns: Vec::new(),
            illegal_actions: 0,
            parse_fallbacks: 0,
            cfg,
        })
    }

    pub fn memory(&self) -> &KnowledgeMemory {
        &self.memory
    }

    pub fn trajectory(&self) -> &TrajectoryMemory {
        &self.traj
    }

    pub fn policy(&self) -> &ActionBackend {
        &self.policy
    }

    pub fn meta_records(&self) -> &[MetaRecord] {
        &self.meta_records
    }

    fn run_loop(&mut self, mut sinks: Option<&mut Sinks>) -> Result<RunReport> {
        let ablation = self.cfg.ablation();
        let act_cfg = ActConfig::from_run(&self.cfg);
        let interval = self.cfg.run.mctrl_interval;
        let mut artifacts = Vec::new();

        for n in 0..self.cfg.run.steps_total {
            let state = self.env.state().clone();
            let sel = select_action(
                &state,
                &self.memory,
                &mut self.policy,
                &act_cfg,
                &mut self.act_rng,
            )?;
            let result = self.env.step(sel.action)?;
            self.illegal_actions += usize::from(result.illegal_action);
            self.parse_fallbacks += usize::from(sel.parse_fallback);
            let step = TrajectoryStep {
                t: n,
                state: StateDigest::of(&state),
                action: sel.action,
                r_env: result.reward,
                r_self: sel.r_self,
                next_state: StateDigest::of(&result.next_state),
                flags: StepFlags {
                    illegal_action: result.illegal_action,
                    parse_fallback: sel.parse_fallback,
                },
            };
            if let Some(s) = sinks.as_deref_mut() {
                s.trajectory.write(&step)?;
            }
            self.traj.append_step(step)?;
            if result.done {
                self.episode_returns.push(result.next_state.episode_return);
                self.env.reset()?;
            }

            let count = n + 1;
            if ablation.meta_enabled() && self.scheduler.due(count)? {
                self.meta_cycle(count, sinks.as_deref_mut())?;
            }
            if ablation.rl_enabled() && count % interval == 0 {
                let policy = self.policy.trainable()?;
                let report = grpo_round(
                    policy,
                    &self.traj,
                    &self.memory,
                    &self.cfg.mctrl,
                    &mut self.mctrl_rng,
                    self.train_reports.len(),
                )?;
                log::info!(
                    "round {} at t={}: majority {:.3}, agreement {:.3}, |dtheta| {:.4}",
                    report.round_index,
                    count,
                    report.mean_majority_ratio,
                    report.agreement_ratio,
                    report.param_delta_norm
                );
                if let Some(s) = sinks.as_deref_mut() {
                    writeln!(s.metrics, "{}", report.csv_row())?;
                }
                self.train_reports.push(report);
            }
        }

        if let Some(s) = sinks {
            s.trajectory.flush()?;
            s.meta_log.flush()?;
            if let Some(d) = s.meta_dump.as_mut() {
                d.flush()?;
            }
            s.metrics.flush()?;
            artifacts.extend(
                [
                    CONFIG_FILE,
                    TRAJECTORY_FILE,
                    META_LOG_FILE,
                    METRICS_FILE,
                    REPORT_FILE,
                ]
                .map(String::from),
            );
            if s.meta_dump.is_some() {
                artifacts.push(META_DUMP_FILE.into());
            }
            for r in &self.meta_records {
                artifacts.push(format!("{MEMORY_DIR}/memory_{:06}.json", r.fired_at));
            }
        }

        let total_return: f64 = self.traj.steps().iter().map(|s| s.r_env).sum();
        Ok(RunReport {
            game: self.cfg.env.game,
            ablation,
            seeds: self.cfg.seeds(),
            steps: self.cfg.run.steps_total,
            total_return,
            episode_returns: self.episode_returns.clone(),
            unfinished_return: self.env.state().episode_return,
            meta_cycles: self.meta_records.len(),
            mctrl_rounds: self.train_reports.len(),
            param_delta_total: self.train_reports.iter().map(|r| r.param_delta_norm).sum(),
            illegal_actions: self.illegal_actions,
            parse_fallbacks: self.parse_fallbacks,
            final_memory: self.memory.clone(),
            train_reports: self.train_reports.clone(),
            artifacts,
        })
    }

    fn meta_cycle(&mut self, t: u64, sinks: Option<&mut Sinks>) -> Result<()> {
        let backend = self
            .meta_backend
            .as_deref_mut()
            .expect("meta backend exists when meta reasoning is enabled");
        let out = run_meta_cycle(
            &self.traj,
            &self.memory,
            backend,
            &self.scheduler,
            t,
            MetaCycleOptions {
                capacity: self.cfg.memory.capacity,
                two_call: self.cfg.metareason.two_call,
                temperature: self.cfg.metareason.temperature,
                cycle_index: self.meta_records.len(),
            },
        )?;
        self.memory = out.memory;
        self.scheduler = out.scheduler;
        if let Some(s) = sinks {
            s.meta_log.write(&out.record)?;
            if let Some(d) = s.meta_dump.as_mut() {
                for x in &out.exchanges {
                    d.write(x)?;
                }
            }
            self.memory.save_snapshot(&s.dir.join(MEMORY_DIR), t)?;
        }
        self.meta_records.push(out.record);
        Ok(())
    }
}

/// Runs without writing artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    Agent::new(cfg.clone())?.run_loop(None)
}

/// Runs and persists every artifact under `dir` (created if missing).
pub fn run_in_dir(cfg: &RunConfig, dir: &Path, opts: &RunOptions) -> Result<RunReport> {
    let agent = Agent::new(cfg.clone())?;
    run_agent_in_dir(agent, dir, opts)
}

pub fn run_agent_in_dir(mut agent: Agent, dir: &Path, opts: &RunOptions) -> Result<RunReport> {
    fs::create_dir_all(dir.join(MEMORY_DIR))?;
    fs::write(dir.join(CONFIG_FILE), agent.cfg.to_toml()?)?;
    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    writeln!(
        metrics,
        "{}",
        TrainReport::csv_header(agent.cfg.mctrl.epochs)
    )?;
    let mut sinks = Sinks {
        dir: dir.to_path_buf(),
        trajectory: JsonlWriter::create(&dir.join(TRAJECTORY_FILE))?,
        meta_log: JsonlWriter::create(&dir.join(META_LOG_FILE))?,
        meta_dump: if opts.dump_meta {
            Some(JsonlWriter::create(&dir.join(META_DUMP_FILE))?)
        } else {
            None
        },
        metrics,
    };
    let report = agent.run_loop(Some(&mut sinks))?;
    fs::write(
        dir.join(REPORT_FILE),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

/// What `replay` found when re-checking a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub steps: usize,
    pub meta_cycles: usize,
    /// Sum of trajectory rewards equals the reported total.
    pub return_matches: bool,
    /// Re-applying the meta log reproduces the final memory.
    pub memory_matches: bool,
    /// Re-running the stored configuration reproduces `metrics.csv`.
    pub metrics_match: Option<bool>,
}

impl ReplayCheck {
    pub fn ok(&self) -> bool {
        self.return_matches && self.memory_matches && self.metrics_match.unwrap_or(true)
    }
}

/// Verifies a run directory; with `rerun`, also re-executes the stored
/// configuration in a scratch directory and compares `metrics.csv`.
pub fn replay_run_dir(dir: &Path, rerun: Option<&Path>) -> Result<ReplayCheck> {
    let traj = TrajectoryMemory::read_jsonl(&dir.join(TRAJECTORY_FILE))?;
    let records = crate::metareason::read_meta_log(&dir.join(META_LOG_FILE))?;
    let report: RunReport = serde_json::from_str(&fs::read_to_string(dir.join(REPORT_FILE))?)?;
    let cfg = RunConfig::from_toml_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let total: f64 = traj.steps().iter().map(|s| s.r_env).sum();
    let replayed =
        crate::metareason::replay_meta_log(&KnowledgeMemory::new(cfg.memory.capacity), &records);
    let metrics_match = match rerun {
        Some(scratch) => {
            run_in_dir(&cfg, scratch, &RunOptions::default())?;
            Some(fs::read(dir.join(METRICS_FILE))? == fs::read(scratch.join(METRICS_FILE))?)
        }
        None => None,
    };
    Ok(ReplayCheck {
        steps: traj.len(),
        meta_cycles: records.len(),
        return_matches: (total - report.total_return).abs() <= 1e-9 * total.abs().max(1.0),
        memory_matches: replayed.to_json() == report.final_memory.to_json(),
        metrics_match,
    })
}
