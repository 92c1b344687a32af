//! Test-time reinforcement learning on replayed states: majority-vote
//! pseudo-labels, indicator rewards, group-normalized advantages and a
//! clipped importance-weighted surrogate ascended by full-batch gradient
//! steps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::ActionId;
use crate::error::{config_err, usage_err, Error, Result};
use crate::memory::{KnowledgeMemory, TrajectoryMemory};
use crate::policy::{
    logprob_and_grad_tempered, toy_candidates, CandidateResponse, FeatureVector, PolicyParams,
    PolicyRng, ToyPolicy,
};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctrlConfig {
    /// Candidates per replayed state (group size).
    pub k: usize,
    pub epochs: usize,
    /// Symmetric clip range `(1 - eps, 1 + eps)`; infinity disables clipping.
    pub clip_eps: f64,
    pub lr: f64,
    /// Number of most recent states replayed per round.
    pub t_window: usize,
    /// Rollout sampling temperature.
    pub temperature: f64,
    pub std_mode: StdMode,
    pub adv_eps: f64,
    /// Vote the golden action on a separate draw of this many candidates;
    /// unset, the `k` rollout candidates vote for themselves.
    pub vote_samples: Option<usize>,
}

impl Default for MctrlConfig {
    fn default() -> Self {
        MctrlConfig {
            k: 8,
            epochs: 5,
            clip_eps: 0.2,
            lr: 0.01,
            t_window: 100,
            temperature: 1.0,
            std_mode: StdMode::Population,
            adv_eps: DEFAULT_EPS,
            vote_samples: None,
        }
    }
}

impl MctrlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(config_err("mctrl.k must be >= 2"));
        }
        if self.vote_samples == Some(0) {
            return Err(config_err("mctrl.vote_samples must be >= 1"));
        }
        if self.t_window == 0 {
            return Err(config_err("mctrl.t_window must be >= 1"));
        }
        if !(self.clip_eps > 0.0) {
            return Err(config_err("mctrl.clip_eps must be > 0"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(config_err("mctrl.lr must be finite and >= 0"));
        }
        if !(self.temperature > 0.0) {
            return Err(config_err("mctrl.temperature must be > 0 for rollouts"));
        }
        Ok(())
    }
}

/// Majority vote over parsed actions; ties go to the lowest action index.
/// Returns the winner and `max count / parsed count`.
pub fn vote(actions: &[Option<ActionId>]) -> Result<(ActionId, f64)> {
    let mut counts = [0usize; ActionId::COUNT];
    let mut parsed = 0;
    for a in actions.iter().flatten() {
        counts[a.index()] += 1;
        parsed += 1;
    }
    if parsed == 0 {
        return Err(Error::Vote("no candidate parsed to an action".into()));
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    let golden = ActionId::from_index(best).expect("index below COUNT");
    Ok((golden, counts[best] as f64 / parsed as f64))
}

pub fn golden_action(candidates: &[CandidateResponse]) -> Result<(ActionId, f64)> {
    let actions: Vec<Option<ActionId>> = candidates.iter().map(|c| c.action).collect();
    vote(&actions)
}

pub fn indicator_rewards(candidates: &[CandidateResponse], golden: ActionId) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| if c.action == Some(golden) { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantages {
    pub values: Vec<f64>,
    /// Zero spread: every advantage is 0 and the group is skipped.
    pub degenerate: bool,
}

/// `(r - mean) / std` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<Advantages> {
    group_advantages_with(rewards, eps, StdMode::Population)
}

pub fn group_advantages_with(rewards: &[f64], eps: f64, mode: StdMode) -> Result<Advantages> {
    let k = rewards.len();
    if k < 2 {
        return Err(usage_err(format!("group of {k} rewards; need at least 2")));
    }
    let n = k as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let ss: f64 = rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
    let std = match mode {
        StdMode::Population => (ss / n).sqrt(),
        StdMode::Sample => (ss / (n - 1.0)).sqrt(),
    };
    if std < eps {
        return Ok(Advantages {
            values: vec![0.0; k],
            degenerate: true,
        });
    }
    Ok(Advantages {
        values: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

/// One replayed state with its voted rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    /// Time index of the replayed trajectory step.
    pub t: u64,
    pub candidates: Vec<CandidateResponse>,
    pub golden: ActionId,
    pub majority_ratio: f64,
    pub rewards: Vec<f64>,
    pub advantages: Advantages,
}

/// What the surrogate needs from a group: the state encoding, each
/// candidate's action slot (`None` for a failed parse, which contributes no
/// gradient) and its advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayGroup {
    pub fv: FeatureVector,
    pub slots: Vec<Option<usize>>,
    pub advantages: Vec<f64>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub objective: f64,
    pub grad: Vec<f64>,
    /// Terms on the constant (clipped) branch.
    pub clipped: usize,
    pub terms: usize,
}

/// `sum_groups (1/K) sum_i min(w_i A_i, clip(w_i, 1-eps, 1+eps) A_i)` with
/// `w_i = exp(logpi(a_i) - logpi_old(a_i))`, and its exact gradient
/// (zero on the clipped branch).
pub fn surrogate_eval(
    params: &PolicyParams,
    params_old: &PolicyParams,
    groups: &[ReplayGroup],
    clip_eps: f64,
) -> Result<SurrogateEval> {
    if params.theta.len() != params_old.theta.len() {
        return Err(usage_err("params and params_old differ in length"));
    }
    let mut objective = 0.0;
    let mut grad = vec![0.0; params.theta.len()];
    let (mut clipped, mut terms) = (0, 0);
    for g in groups {
        if g.slots.len() != g.advantages.len() {
            return Err(usage_err("group slots and advantages differ in length"));
        }
        let inv_k = 1.0 / g.slots.len() as f64;
        for (slot, &adv) in g.slots.iter().zip(&g.advantages) {
            let Some(slot) = *slot else { continue };
            let (lp, glp) = logprob_and_grad_tempered(params, &g.fv, slot, g.temperature)?;
            let (lp_old, _) = logprob_and_grad_tempered(params_old, &g.fv, slot, g.temperature)?;
            let w = (lp - lp_old).exp();
            let wc = w.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            terms += 1;
            if wc * adv < w * adv {
                objective += inv_k * wc * adv;
                clipped += 1;
            } else {
                objective += inv_k * w * adv;
                let c = inv_k * w * adv;
                for (acc, gi) in grad.iter_mut().zip(&glp) {
                    *acc += c * gi;
                }
            }
        }
    }
    Ok(SurrogateEval {
        objective,
        grad,
        clipped,
        terms,
    })
}

pub fn surrogate_and_grad(
    params: &PolicyParams,
    params_old: &PolicyParams,
    groups: &[ReplayGroup],
    clip_eps: f64,
) -> Result<(f64, Vec<f64>)> {
    let e = surrogate_eval(params, params_old, groups, clip_eps)?;
    Ok((e.objective, e.grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub round_index: usize,
    /// Step count when the round ran.
    pub t: u64,
    pub states_replayed: usize,
    /// States dropped because no candidate parsed.
    pub states_skipped: usize,
    pub degenerate_groups: usize,
    pub epochs: usize,
    pub mean_majority_ratio: f64,
    pub agreement_ratio: f64,
    pub mean_clipped_fraction: f64,
    pub param_delta_norm: f64,
    /// Surrogate value at the start of each epoch.
    pub objective_trace: Vec<f64>,
}

impl TrainReport {
    pub fn csv_header(epochs: usize) -> String {
        let mut h = String::from(
            "round,t,states_replayed,degenerate_groups,mean_majority_ratio,agreement_ratio,mean_clipped_fraction,param_delta_norm",
        );
        for e in 1..=epochs {
            let _ = write!(h, ",objective_epoch{e}");
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{},{},{},{}",
            self.round_index,
            self.t,
            self.states_replayed,
            self.degenerate_groups,
            self.mean_majority_ratio,
            self.agreement_ratio,
            self.mean_clipped_fraction,
            self.param_delta_norm
        );
        for o in &self.objective_trace {
            let _ = write!(r, ",{o}");
        }
        r
    }
}

/// Builds the voted rollout groups for the last `t_window` steps under the
/// current parameters.
pub fn collect_groups(
    policy: &ToyPolicy,
    traj: &TrajectoryMemory,
    memory: &KnowledgeMemory,
    cfg: &MctrlConfig,
    rng: &mut PolicyRng,
) -> Result<(Vec<RolloutGroup>, Vec<ReplayGroup>, usize)> {
    let tail = traj.tail_states(cfg.t_window)?;
    let mut rollouts = Vec::with_capacity(tail.len());
    let mut replay = Vec::new();
    let mut skipped = 0;
    for step in tail {
        let state = &step.state.state;
        let fv = policy.encode(state, memory);
        let voters = match cfg.vote_samples {
            Some(n) => Some(toy_candidates(
                policy,
                state,
                memory,
                &fv,
                n,
                cfg.temperature,
                rng,
            )?),
            None => None,
        };
        let candidates = toy_candidates(policy, state, memory, &fv, cfg.k, cfg.temperature, rng)?;
        let (golden, majority_ratio) = match golden_action(voters.as_deref().unwrap_or(&candidates))
        {
            Ok(v) => v,
            Err(e) => {
                log::debug!("skipping replayed state t={}: {e}", step.t);
                skipped += 1;
                continue;
            }
        };
        let rewards = indicator_rewards(&candidates, golden);
        let advantages = group_advantages_with(&rewards, cfg.adv_eps, cfg.std_mode)?;
        if !advantages.degenerate {
            replay.push(ReplayGroup {
                fv,
                slots: candidates
                    .iter()
                    .map(|c| c.action.and_then(|a| policy.schema.slot_of(a)))
                    .collect(),
                advantages: advantages.values.clone(),
                temperature: cfg.temperature,
            });
        }
        rollouts.push(RolloutGroup {
            t: step.t,
            candidates,
            golden,
            majority_ratio,
            rewards,
            advantages,
        });
    }
    Ok((rollouts, replay, skipped))
}

/// One round: snapshot, replay and vote, then `epochs` ascent steps on the
/// clipped surrogate.
pub fn grpo_round(
    policy: &mut ToyPolicy,
    traj: &TrajectoryMemory,
    memory: &KnowledgeMemory,
    cfg: &MctrlConfig,
    rng: &mut PolicyRng,
    round_index: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    if traj.is_empty() {
        return Err(usage_err("grpo_round needs at least one trajectory step"));
    }
    let old = policy.params.clone();
    let (rollouts, replay, skipped) = collect_groups(policy, traj, memory, cfg, rng)?;
    let tail = traj.tail_states(cfg.t_window)?;
    let agree = rollouts
        .iter()
        .filter(|g| {
            tail.iter()
                .find(|s| s.t == g.t)
                .is_some_and(|s| s.action == g.golden)
        })
        .count();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut clipped_fracs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let e = surrogate_eval(&policy.params, &old, &replay, cfg.clip_eps)?;
        trace.push(e.objective);
        clipped_fracs.push(if e.terms == 0 {
            0.0
        } else {
            e.clipped as f64 / e.terms as f64
        });
        for (w, g) in policy.params.theta.iter_mut().zip(&e.grad) {
            *w += cfg.lr * g;
        }
    }
    if !policy.params.is_finite() {
        policy.params = old;
        return Err(usage_err("parameter update produced non-finite values"));
    }
    if cfg.epochs > 0 && !replay.is_empty() {
        policy.params.version += 1;
    }
    let n = rollouts.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>, len: usize| {
        if len == 0 {
            0.0
        } else {
            xs.sum::<f64>() / len as f64
        }
    };
    Ok(TrainReport {
        round_index,
        t: traj.last().map_or(0, |s| s.t + 1),
        states_replayed: n,
        states_skipped: skipped,
        degenerate_groups: n - replay.len(),
        epochs: cfg.epochs,
        mean_majority_ratio: mean(&mut rollouts.iter().map(|g| g.majority_ratio), n),
        agreement_ratio: if n == 0 { 0.0 } else { agree as f64 / n as f64 },
        mean_clipped_fraction: mean(&mut clipped_fracs.iter().copied(), clipped_fracs.len()),
        param_delta_norm: policy.params.distance(&old),
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_counts_and_ties() {
        let f = Some(ActionId::FIRE);
        let l = Some(ActionId::LEFT);
        assert_eq!(vote(&[f, f, l, f]).unwrap(), (ActionId::FIRE, 0.75));
        let (g, r) = vote(&[Some(ActionId::DOWN), Some(ActionId::UP)]).unwrap();
        assert_eq!((g, r), (ActionId::UP, 0.5));
        assert_eq!(vote(&[f; 8]).unwrap().1, 1.0);
        assert!(matches!(vote(&[None, None]), Err(Error::Vote(_))));
        assert_eq!(vote(&[None, l, None]).unwrap(), (ActionId::LEFT, 1.0));
    }

    #[test]
    fn balanced_rewards_give_unit_advantages() {
        let a = group_advantages(&[1., 1., 0., 0., 1., 0., 1., 0.], DEFAULT_EPS).unwrap();
        assert_eq!(a.values, vec![1., 1., -1., -1., 1., -1., 1., -1.]);
        assert!(!a.degenerate);
    }

    #[test]
    fn unanimous_rewards_are_degenerate() {
        let a = group_advantages(&[1.0; 8], DEFAULT_EPS).unwrap();
        assert!(a.degenerate);
        assert!(a.values.iter().all(|&x| x == 0.0));
        assert!(group_advantages(&[1.0], DEFAULT_EPS).is_err());
    }

    #[test]
    fn sample_std_shrinks_advantages() {
        let r = [1., 0., 0., 0.];
        let p = group_advantages_with(&r, DEFAULT_EPS, StdMode::Population).unwrap();
        let s = group_advantages_with(&r, DEFAULT_EPS, StdMode::Sample).unwrap();
        assert!(s.values[0] < p.values[0]);
    }

    #[test]
    fn clipped_positive_term_is_constant() {
        use crate::env::GameId;
        use crate::policy::FeatureSchema;
        let schema = FeatureSchema::for_game(GameId::Crossing);
        let old = PolicyParams::zeros(&schema);
        let mut new = old.clone();
        let d = schema.dim();
        new.theta[0] = 3.0; // NOOP bias: w for NOOP well above 1.2
        let fv = FeatureVector {
            values: {
                let mut v = vec![0.0; d];
                v[0] = 1.0;
                v
            },
        };
        let g = ReplayGroup {
            fv,
            slots: vec![Some(0), Some(1)],
            advantages: vec![1.0, -1.0],
            temperature: 1.0,
        };
        let e = surrogate_eval(&new, &old, &[g], 0.2).unwrap();
        // NOOP term clipped at 1.2; UP term (w < 0.8, A < 0) also clipped.
        assert_eq!(e.clipped, 2);
        assert!((e.objective - 0.5 * (1.2 - 0.8)).abs() < 1e-12);
        assert!(e.grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn separate_vote_draw_keeps_group_size() {
        use crate::env::{reset, GameId, GameSpec};
        use crate::memory::{StateDigest, StepFlags, TrajectoryStep};
        use rand::SeedableRng;
        let spec = GameSpec::new(GameId::Shooter);
        let mut traj = TrajectoryMemory::new();
        for t in 0..5 {
            let s = reset(&spec, t).unwrap();
            traj.append_step(TrajectoryStep {
                t,
                state: StateDigest::of(&s),
                action: ActionId::FIRE,
                r_env: 0.0,
                r_self: None,
                next_state: StateDigest::of(&s),
                flags: StepFlags::default(),
            })
            .unwrap();
        }
        let policy = ToyPolicy::with_prior(GameId::Shooter, 2.0, 1.0);
        let cfg = MctrlConfig {
            vote_samples: Some(3),
            ..MctrlConfig::default()
        };
        let mut rng = PolicyRng::seed_from_u64(1);
        let (rollouts, _, _) =
            collect_groups(&policy, &traj, &KnowledgeMemory::new(20), &cfg, &mut rng).unwrap();
        for g in &rollouts {
            assert_eq!(g.candidates.len(), 8);
            // Three voters can only agree in thirds.
            let thirds = g.majority_ratio * 3.0;
            assert!((thirds - thirds.round()).abs() < 1e-12);
        }
        assert!(MctrlConfig {
            vote_samples: Some(0),
            ..cfg
        }
        .validate()
        .is_err());
    }
}
