//! Fixed inputs shared by the kernel benchmarks.

use mctr_core::env::{reset, ActionId, GameId, GameSpec};
use mctr_core::mctrl::{group_advantages, ReplayGroup, DEFAULT_EPS};
use mctr_core::memory::{StateDigest, StepFlags, TrajectoryMemory, TrajectoryStep};
use mctr_core::policy::{FeatureSchema, FeatureVector, PolicyParams};
use mctr_core::protocol::{serialize_meta_response, MemoryOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn params(schema: &FeatureSchema, seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PolicyParams::zeros(schema);
    for w in &mut p.theta {
        *w = rng.random_range(-1.0..1.0);
    }
    p
}

pub fn features(schema: &FeatureSchema, seed: u64) -> FeatureVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureVector {
        values: (0..schema.dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    }
}

/// `n` replay groups of `k` candidates with mixed indicator rewards.
pub fn groups(schema: &FeatureSchema, n: usize, k: usize, seed: u64) -> Vec<ReplayGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let slots: Vec<Option<usize>> = (0..k)
                .map(|_| Some(rng.random_range(0..schema.num_actions())))
                .collect();
            let golden = slots[0];
            let rewards: Vec<f64> = slots
                .iter()
                .enumerate()
                .map(|(j, s)| f64::from(*s == golden && (j == 0 || j != i % k)))
                .collect();
            ReplayGroup {
                fv: features(schema, seed ^ i as u64),
                slots,
                advantages: group_advantages(&rewards, DEFAULT_EPS).unwrap().values,
                temperature: 1.0,
            }
        })
        .collect()
}

/// A meta response with a few rule edits.
pub fn meta_response() -> String {
    serialize_meta_response(
        "The player kept moving away from aligned targets and missed easy hits.",
        &[
            MemoryOp::Delete(2),
            MemoryOp::Add("Fire when the player is aligned with a target.".into()),
            MemoryOp::Add("Move toward the nearest target column before firing.".into()),
            MemoryOp::Keep,
        ],
    )
}

/// `n` recorded shooter steps from distinct starting states.
pub fn trajectory(n: u64) -> TrajectoryMemory {
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
