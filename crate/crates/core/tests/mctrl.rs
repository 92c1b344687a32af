use mctr_core::env::{reset, ActionId, GameId, GameSpec};
use mctr_core::mctrl::{
    golden_action, group_advantages, grpo_round, indicator_rewards, surrogate_and_grad,
    surrogate_eval, vote, MctrlConfig, ReplayGroup, DEFAULT_EPS,
};
use mctr_core::memory::{
    KnowledgeMemory, StateDigest, StepFlags, TrajectoryMemory, TrajectoryStep,
};
use mctr_core::policy::{
    action_logits, logprob_and_grad, softmax, CandidateError, CandidateResponse, FeatureSchema,
    FeatureVector, PolicyParams, PolicyRng, ToyPolicy,
};
use mctr_core::protocol::ParseError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::statistics::Statistics;

fn cand(i: usize, a: Option<ActionId>) -> CandidateResponse {
    CandidateResponse {
        candidate_index: i,
        text: String::new(),
        parsed: Err(CandidateError::Parse(ParseError::MissingAnswer)),
        action: a,
        logprob: None,
    }
}

#[test]
fn examples_from_counting() {
    use ActionId as A;
    let c: Vec<_> = [A::FIRE, A::FIRE, A::LEFT, A::FIRE]
        .iter()
        .enumerate()
        .map(|(i, &a)| cand(i, Some(a)))
        .collect();
    assert_eq!(golden_action(&c).unwrap(), (A::FIRE, 0.75));
    assert_eq!(indicator_rewards(&c, A::FIRE), vec![1.0, 1.0, 0.0, 1.0]);
    let mut with_failure = c.clone();
    with_failure[0].action = None;
    assert_eq!(
        indicator_rewards(&with_failure, A::FIRE),
        vec![0.0, 1.0, 0.0, 1.0]
    );
}

#[test]
fn one_winner_in_four() {
    // mean 0.25, population std sqrt(3)/4.
    let a = group_advantages(&[1.0, 0.0, 0.0, 0.0], DEFAULT_EPS).unwrap();
    let want = [
        3f64.sqrt(),
        -1.0 / 3f64.sqrt(),
        -1.0 / 3f64.sqrt(),
        -1.0 / 3f64.sqrt(),
    ];
    for (x, y) in a.values.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn brute_force_vote(actions: &[Option<ActionId>]) -> Option<(ActionId, f64)> {
    let parsed: Vec<ActionId> = actions.iter().flatten().copied().collect();
    if parsed.is_empty() {
        return None;
    }
    let mut tallies: Vec<(usize, usize)> = (0..18)
        .map(|i| (parsed.iter().filter(|a| a.index() == i).count(), i))
        .collect();
    // Highest count first, then lowest index.
    tallies.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    Some((
        ActionId::from_index(tallies[0].1).unwrap(),
        tallies[0].0 as f64 / parsed.len() as f64,
    ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn advantages_match_statistics_oracle(rewards in prop::collection::vec(
        prop_oneof![Just(0.0), Just(1.0), -3.0f64..3.0], 2..16)) {
        let a = group_advantages(&rewards, DEFAULT_EPS).unwrap();
        let mean = rewards.iter().mean();
        let std = rewards.iter().population_std_dev();
        if std < DEFAULT_EPS {
            prop_assert!(a.degenerate);
            prop_assert!(a.values.iter().all(|&x| x == 0.0));
        } else {
            for (x, r) in a.values.iter().zip(&rewards) {
                prop_assert!((x - (r - mean) / std).abs() < 1e-9);
            }
            prop_assert!(a.values.iter().mean().abs() < 1e-9);
            prop_assert!((a.values.iter().population_std_dev() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn vote_matches_brute_force(actions in prop::collection::vec(
        prop::option::weighted(0.9, (0usize..18).prop_map(|i| ActionId::from_index(i).unwrap())),
        1..12)) {
        match (vote(&actions), brute_force_vote(&actions)) {
            (Ok(got), Some(want)) => prop_assert_eq!(got, want),
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
        }
    }
}

fn random_groups(rng: &mut ChaCha8Rng, schema: &FeatureSchema, n: usize) -> Vec<ReplayGroup> {
    let m = schema.num_actions();
    (0..n)
        .map(|_| {
            let k = 8;
            let rewards: Vec<f64> = loop {
                let r: Vec<f64> = (0..k).map(|_| f64::from(rng.random_bool(0.5))).collect();
                if r.contains(&1.0) && r.contains(&0.0) {
                    break r;
                }
            };
            ReplayGroup {
                fv: FeatureVector {
                    values: (0..schema.dim())
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                },
                slots: (0..k).map(|_| Some(rng.random_range(0..m))).collect(),
                advantages: group_advantages(&rewards, DEFAULT_EPS).unwrap().values,
                temperature: 1.0,
            }
        })
        .collect()
}

fn random_params(rng: &mut ChaCha8Rng, schema: &FeatureSchema, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(schema);
    for w in &mut p.theta {
        *w = rng.random_range(-scale..scale);
    }
    p
}

#[test]
fn surrogate_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let schema = FeatureSchema::for_game(GameId::Shooter);
    let h = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 120 {
        let old = random_params(&mut rng, &schema, 1.0);
        let mut new = old.clone();
        for w in &mut new.theta {
            *w += rng.random_range(-0.05..0.05);
        }
        let groups = random_groups(&mut rng, &schema, 3);
        // Keep every ratio away from the clip boundaries so the surrogate is
        // smooth within the difference stencil.
        let ratios_ok = groups.iter().all(|g| {
            g.slots.iter().all(|s| {
                let s = s.unwrap();
                let lp = logprob_and_grad(&new, &g.fv, s).unwrap().0;
                let lo = logprob_and_grad(&old, &g.fv, s).unwrap().0;
                let w = (lp - lo).exp();
                (w - 0.8).abs() > 1e-3 && (w - 1.2).abs() > 1e-3
            })
        });
        if !ratios_ok {
            continue;
        }
        let (_, grad) = surrogate_and_grad(&new, &old, &groups, 0.2).unwrap();
        let mut fds = Vec::with_capacity(grad.len());
        for j in 0..new.theta.len() {
            let (mut up, mut dn) = (new.clone(), new.clone());
            up.theta[j] += h;
            dn.theta[j] -= h;
            let fd = (surrogate_and_grad(&up, &old, &groups, 0.2).unwrap().0
                - surrogate_and_grad(&dn, &old, &groups, 0.2).unwrap().0)
                / (2.0 * h);
            fds.push(fd);
        }
        let diff: f64 = grad
            .iter()
            .zip(&fds)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = grad.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
        checked += 1;
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn at_the_snapshot_the_surrogate_is_zero_per_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let schema = FeatureSchema::for_game(GameId::Dodger);
    let p = random_params(&mut rng, &schema, 1.0);
    for g in random_groups(&mut rng, &schema, 20) {
        let (obj, grad) = surrogate_and_grad(&p, &p, std::slice::from_ref(&g), 0.2).unwrap();
        assert!(obj.abs() < 1e-12);
        // w = 1: gradient is (1/K) sum A_i grad log pi(a_i).
        let mut want = vec![0.0; p.theta.len()];
        for (s, a) in g.slots.iter().zip(&g.advantages) {
            let (_, gl) = logprob_and_grad(&p, &g.fv, s.unwrap()).unwrap();
            for (w, x) in want.iter_mut().zip(gl) {
                *w += a * x / 8.0;
            }
        }
        for (x, y) in grad.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn unclipped_first_step_is_the_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let schema = FeatureSchema::for_game(GameId::Collector);
    let p = random_params(&mut rng, &schema, 0.5);
    let groups = random_groups(&mut rng, &schema, 10);
    let (_, grad) = surrogate_and_grad(&p, &p, &groups, f64::INFINITY).unwrap();
    let mut pg = vec![0.0; p.theta.len()];
    for g in &groups {
        for (s, a) in g.slots.iter().zip(&g.advantages) {
            let (_, gl) = logprob_and_grad(&p, &g.fv, s.unwrap()).unwrap();
            for (w, x) in pg.iter_mut().zip(gl) {
                *w += a * x / g.slots.len() as f64;
            }
        }
    }
    let dot: f64 = grad.iter().zip(&pg).map(|(a, b)| a * b).sum();
    let n1 = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n2 = pg.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(dot / (n1 * n2) > 0.999999);
}

#[test]
fn clipped_positive_term_contributes_constant() {
    let schema = FeatureSchema::for_game(GameId::Crossing);
    let old = PolicyParams::zeros(&schema);
    let mut new = old.clone();
    new.theta[0] = 2.0; // raises NOOP under the bias feature
    let mut values = vec![0.0; schema.dim()];
    values[0] = 1.0;
    let g = ReplayGroup {
        fv: FeatureVector { values },
        slots: vec![Some(0), Some(2)],
        advantages: vec![1.0, 1.0],
        temperature: 1.0,
    };
    let e = surrogate_eval(&new, &old, &[g], 0.2).unwrap();
    // NOOP: w > 1.2, term = 1.2 * 1 / 2 with zero gradient. DOWN: w < 1,
    // unclipped for a positive advantage.
    let pi_new = softmax(
        &action_logits(
            &new,
            &FeatureVector {
                values: e_values(&schema),
            },
        )
        .unwrap(),
        1.0,
    );
    let w_down = pi_new[2] / (1.0 / 3.0);
    assert_eq!(e.clipped, 1);
    assert!((e.objective - (0.6 + 0.5 * w_down)).abs() < 1e-12);
}

fn e_values(schema: &FeatureSchema) -> Vec<f64> {
    let mut v = vec![0.0; schema.dim()];
    v[0] = 1.0;
    v
}

#[test]
fn one_small_step_raises_the_golden_probability() {
    let schema = FeatureSchema::for_game(GameId::Shooter);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_params(&mut rng, &schema, 0.3);
    let fv = FeatureVector {
        values: (0..schema.dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    };
    // Golden slot 1 wins 4 of 8; rewards [1,1,0,0,1,0,1,0].
    let slots = [1, 1, 0, 2, 1, 3, 1, 4].map(Some).to_vec();
    let rewards = [1., 1., 0., 0., 1., 0., 1., 0.];
    let g = ReplayGroup {
        fv: fv.clone(),
        slots,
        advantages: group_advantages(&rewards, DEFAULT_EPS).unwrap().values,
        temperature: 1.0,
    };
    let (_, grad) = surrogate_and_grad(&p, &p, std::slice::from_ref(&g), 0.2).unwrap();
    let mut next = p.clone();
    for (w, d) in next.theta.iter_mut().zip(grad) {
        *w += 1e-3 * d;
    }
    let before = softmax(&action_logits(&p, &fv).unwrap(), 1.0)[1];
    let after = softmax(&action_logits(&next, &fv).unwrap(), 1.0)[1];
    assert!(after > before, "{before} -> {after}");
}

fn shooter_traj(n: u64) -> TrajectoryMemory {
    let spec = GameSpec::new(GameId::Shooter);
    let mut tm = TrajectoryMemory::new();
    for t in 0..n {
        let s = reset(&spec, t).unwrap();
        tm.append_step(TrajectoryStep {
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
    tm
}

#[test]
fn grpo_round_is_deterministic_and_bounded() {
    let traj = shooter_traj(40);
    let mem = KnowledgeMemory::new(20);
    let cfg = MctrlConfig {
        t_window: 30,
        ..MctrlConfig::default()
    };
    let go = || {
        let mut policy = ToyPolicy::with_prior(GameId::Shooter, 2.0, 1.0);
        let mut rng = PolicyRng::seed_from_u64(4);
        let r = grpo_round(&mut policy, &traj, &mem, &cfg, &mut rng, 0).unwrap();
        (r, policy.params)
    };
    let (a, pa) = go();
    let (b, pb) = go();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(pa, pb);
    assert_eq!(a.states_replayed, 30);
    assert!((0.0..=1.0).contains(&a.agreement_ratio));
    assert_eq!(a.objective_trace.len(), 5);
    assert!(a.objective_trace[0].abs() < 1e-12);
    assert!(a.param_delta_norm > 0.0);
}

#[test]
fn remote_backends_cannot_be_trained() {
    let mut b = mctr_core::policy::ActionBackend::Text(Box::new(
        mctr_core::backend::ScriptedBackend::new(vec![]),
    ));
    assert!(matches!(b.trainable(), Err(mctr_core::Error::Usage(_))));
}
