use mctr_core::scheduler::{firing_times, round_half_up, SchedulerState};
use proptest::prelude::*;

fn closed_form(k0: f64, growth: f64, n: i32, lo: f64, hi: f64) -> f64 {
    (k0 * growth.powi(-n)).clamp(lo, hi)
}

#[test]
fn default_firing_times() {
    let s = SchedulerState::new(3.0, 0.85, 2, 15).unwrap();
    let times = firing_times(s, 100).unwrap();
    // Intervals 3, 4 (3.53), 4 (4.15), 5 (4.88), 6 (5.74), ...
    assert_eq!(&times[..4], &[3, 7, 11, 16]);
    let gaps: Vec<u64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.windows(2).all(|g| g[0] <= g[1]));
    assert_eq!(*gaps.last().unwrap(), 15);
}

#[test]
fn defaults_settle_at_the_cap() {
    let mut s = SchedulerState::new(3.0, 0.85, 2, 15).unwrap();
    let mut intervals = Vec::new();
    for t in 1..=1000 {
        if s.due(t).unwrap() {
            intervals.push(s.interval());
            s.fire(t).unwrap();
        }
    }
    let first_cap = intervals.iter().position(|&i| i == 15).unwrap();
    assert!(intervals[first_cap..].iter().all(|&i| i == 15));
}

#[test]
fn unit_growth_fires_every_k_steps() {
    for k in 2..=15u32 {
        let s = SchedulerState::new(f64::from(k), 1.0, 2, 15).unwrap();
        let times = firing_times(s, 600).unwrap();
        assert_eq!(times.len() as u64, 600 / u64::from(k));
        assert!(times
            .iter()
            .enumerate()
            .all(|(i, &t)| t == (i as u64 + 1) * u64::from(k)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn iterates_match_closed_form(k0 in 2.0f64..15.0, growth in 0.5f64..1.0, n in 0i32..40) {
        let mut s = SchedulerState::new(k0, growth, 2, 15).unwrap();
        for _ in 0..n {
            s = s.next_interval().unwrap();
        }
        // Clipping only ever binds at the top for growth < 1, so clipping the
        // unclipped closed form is exact.
        let want = closed_form(k0, growth, n, 2.0, 15.0);
        prop_assert!(((s.k - want) / want).abs() < 1e-12, "{} vs {}", s.k, want);
    }

    #[test]
    fn interval_sequence_is_monotone_and_bounded(k0 in 2.0f64..15.0, growth in 0.3f64..=1.0) {
        let mut s = SchedulerState::new(k0, growth, 2, 15).unwrap();
        let mut prev = s.k;
        for _ in 0..60 {
            s = s.next_interval().unwrap();
            prop_assert!(s.k >= prev);
            prop_assert!((2..=15).contains(&round_half_up(s.k)));
            if growth == 1.0 {
                prop_assert_eq!(s.k, k0);
            }
            prev = s.k;
        }
    }
}
