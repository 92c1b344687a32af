use mctr_core::env::{reset, GameId, GameSpec};
use mctr_core::memory::KnowledgeMemory;
use mctr_core::policy::{
    action_logits, logprob_and_grad, logprob_and_grad_tempered, softmax, FeatureSchema,
    FeatureVector, PolicyParams, ToyPolicy,
};
use mctr_core::protocol::MemoryOp;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, game: GameId) -> (PolicyParams, FeatureVector, usize) {
    let schema = FeatureSchema::for_game(game);
    let mut p = PolicyParams::zeros(&schema);
    for w in &mut p.theta {
        *w = rng.random_range(-1.5..1.5);
    }
    let fv = FeatureVector {
        values: (0..schema.dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    };
    let slot = rng.random_range(0..schema.num_actions());
    (p, fv, slot)
}

/// Norm-wise relative error between an analytic and a numerical gradient.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

#[test]
fn logprob_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let game = GameId::ALL[i % 4];
        let (p, fv, slot) = random_instance(&mut rng, game);
        let temp = if i % 3 == 0 { 0.7 } else { 1.0 };
        let (_, grad) = logprob_and_grad_tempered(&p, &fv, slot, temp).unwrap();
        let mut fds = Vec::with_capacity(grad.len());
        for j in 0..p.theta.len() {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up.theta[j] += h;
            dn.theta[j] -= h;
            let fd = (logprob_and_grad_tempered(&up, &fv, slot, temp).unwrap().0
                - logprob_and_grad_tempered(&dn, &fv, slot, temp).unwrap().0)
                / (2.0 * h);
            fds.push(fd);
        }
        worst = worst.max(rel_err(&grad, &fds));
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn uniform_policy_logprob() {
    for game in GameId::ALL {
        let schema = FeatureSchema::for_game(game);
        let p = PolicyParams::zeros(&schema);
        let fv = FeatureVector {
            values: vec![0.5; schema.dim()],
        };
        let m = schema.num_actions() as f64;
        let (lp, _) = logprob_and_grad(&p, &fv, 0).unwrap();
        assert!((lp + m.ln()).abs() < 1e-12);
    }
}

#[test]
fn prior_policy_fires_when_the_rule_is_known_and_aligned() {
    let spec = GameSpec::new(GameId::Shooter);
    // Seed 3 starts with a target straight above the player.
    let s = reset(&spec, 3).unwrap();
    let policy = ToyPolicy::with_prior(GameId::Shooter, 2.0, 1.0);
    let empty = KnowledgeMemory::new(20);
    let (known, _) = mctr_core::memory::apply_ops(
        &empty,
        &[MemoryOp::Add(
            "Fire when the player is aligned with a target.".into(),
        )],
        0,
    );
    let fire = policy.schema.slot_of(mctr_core::ActionId::FIRE).unwrap();
    let p_without = policy.probs(&policy.encode(&s, &empty), 1.0).unwrap()[fire];
    let p_with = policy.probs(&policy.encode(&s, &known), 1.0).unwrap()[fire];
    assert!(p_with > p_without);
    assert_eq!(
        policy.greedy(&policy.encode(&s, &known)).unwrap(),
        mctr_core::ActionId::FIRE
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), temp in 0.05f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, fv, _) = random_instance(&mut rng, GameId::Shooter);
        let probs = softmax(&action_logits(&p, &fv).unwrap(), temp);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn softmax_ignores_logit_shifts(seed in any::<u64>(), c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, fv, _) = random_instance(&mut rng, GameId::Collector);
        let l = action_logits(&p, &fv).unwrap();
        let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
        let (a, b) = (softmax(&l, 1.0), softmax(&shifted, 1.0));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert_eq!(mctr_core::policy::argmax(&l), mctr_core::policy::argmax(&shifted));
    }
}
