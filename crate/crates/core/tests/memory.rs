use mctr_core::memory::{apply_ops, KnowledgeMemory, OpOutcome};
use mctr_core::metareason::{replay_meta_log, MetaRecord};
use mctr_core::protocol::MemoryOp;
use proptest::prelude::*;

fn op_strategy() -> impl Strategy<Value = MemoryOp> {
    prop_oneof![
        4 => "[a-e]{1,3}".prop_map(MemoryOp::Add),
        2 => (0usize..25).prop_map(MemoryOp::Delete),
        1 => Just(MemoryOp::Keep),
    ]
}

/// Independent list model of the operation semantics.
fn model(ops: &[MemoryOp], capacity: usize) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for op in ops {
        match op {
            MemoryOp::Add(t) => {
                let t = t.trim().to_string();
                if !t.is_empty() && !v.contains(&t) && v.len() < capacity {
                    v.push(t);
                }
            }
            MemoryOp::Delete(i) if *i < v.len() => {
                v.remove(*i);
            }
            _ => {}
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn capacity_is_never_exceeded(ops in prop::collection::vec(op_strategy(), 0..200)) {
        let mut m = KnowledgeMemory::new(20);
        for chunk in ops.chunks(7) {
            let report = m.apply(chunk, 0);
            prop_assert!(m.len() <= 20);
            prop_assert_eq!(report.outcomes.len(), chunk.len());
        }
    }

    #[test]
    fn matches_the_list_model(ops in prop::collection::vec(op_strategy(), 0..120),
                              cap in 1usize..25) {
        let (m, _) = apply_ops(&KnowledgeMemory::new(cap), &ops, 0);
        let got: Vec<String> = m.texts().map(str::to_string).collect();
        prop_assert_eq!(got, model(&ops, cap));
    }

    #[test]
    fn ids_strictly_increase(ops in prop::collection::vec(op_strategy(), 0..120)) {
        let (m, _) = apply_ops(&KnowledgeMemory::new(20), &ops, 0);
        let ids: Vec<u64> = m.entries().iter().map(|e| e.id).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn log_replay_is_byte_identical(batches in prop::collection::vec(
        prop::collection::vec(op_strategy(), 1..6), 1..30)) {
        let mut m = KnowledgeMemory::new(20);
        let mut records = Vec::new();
        for (i, ops) in batches.into_iter().enumerate() {
            let report = m.apply(&ops, i as u64 * 5);
            records.push(MetaRecord {
                cycle_index: i,
                fired_at: i as u64 * 5,
                window: (0, 0),
                meta_text: String::new(),
                ops,
                apply_report: report,
                memory_size_after: m.len(),
                interval_used: 3.0,
                degraded: false,
                parse_skipped: Vec::new(),
            });
        }
        let replayed = replay_meta_log(&KnowledgeMemory::new(20), &records);
        prop_assert_eq!(replayed.to_json(), m.to_json());
    }
}

#[test]
fn delete_then_add_updates_in_place() {
    let (m, _) = apply_ops(
        &KnowledgeMemory::new(20),
        &[MemoryOp::Add("A".into()), MemoryOp::Add("B".into())],
        0,
    );
    let (m, report) = apply_ops(&m, &[MemoryOp::Delete(0), MemoryOp::Add("A2".into())], 1);
    assert_eq!(m.texts().collect::<Vec<_>>(), ["B", "A2"]);
    assert!(matches!(
        report.outcomes[0],
        OpOutcome::Deleted { index: 0, .. }
    ));
    assert!(matches!(
        report.outcomes[1],
        OpOutcome::Added { index: 1, .. }
    ));
}

#[test]
fn full_memory_reports_capacity_rejection() {
    let adds: Vec<_> = (0..20)
        .map(|i| MemoryOp::Add(format!("rule {i}")))
        .collect();
    let (m, _) = apply_ops(&KnowledgeMemory::new(20), &adds, 0);
    assert_eq!(m.len(), 20);
    let (m2, report) = apply_ops(&m, &[MemoryOp::Add("X".into())], 1);
    assert_eq!(m2, m);
    assert_eq!(report.outcomes, vec![OpOutcome::CapacityRejected]);
}

#[test]
fn snapshots_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = apply_ops(&KnowledgeMemory::new(20), &[MemoryOp::Add("a".into())], 4);
    let path = m.save_snapshot(dir.path(), 42).unwrap();
    assert!(path.ends_with("memory_000042.json"));
    assert_eq!(KnowledgeMemory::load(&path).unwrap(), m);
}
