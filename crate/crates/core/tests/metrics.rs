use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use todpt::metrics::{
    dst_metrics, f1_multilabel, gold_rank, intent_metrics, recall_at_k, MetricError, MetricReport, ACC_JOINT,
    ACC_SLOT,
};
use todpt::task::DownstreamTask;

fn labels() -> impl Strategy<Value = Vec<BTreeSet<u8>>> {
    prop::collection::vec(prop::collection::btree_set(0u8..6, 0..4), 1..12)
}

proptest! {
    #[test]
    fn f1_is_a_fraction_and_perfect_on_identity(golds in labels(), preds in labels()) {
        let n = golds.len().min(preds.len());
        let (g, p) = (&golds[..n], &preds[..n]);
        let (mi, ma) = f1_multilabel(p, g, &[0u8, 1, 2]).unwrap();
        prop_assert!((0.0..=1.0).contains(&mi) && (0.0..=1.0).contains(&ma));
        let (mi, _) = f1_multilabel(g, g, &[]).unwrap();
        let any = g.iter().any(|s| !s.is_empty());
        prop_assert_eq!(mi, if any { 1.0 } else { 0.0 });
    }

    #[test]
    fn recall_is_monotone_in_k(scores in prop::collection::vec(prop::collection::vec(0u8..4, 6), 1..20), gold in 0usize..6) {
        let ex: Vec<Vec<(f64, bool)>> = scores
            .iter()
            .map(|s| s.iter().enumerate().map(|(i, &v)| (f64::from(v), i == gold)).collect())
            .collect();
        let r = recall_at_k(&ex, &[1, 2, 3, 6], 6).unwrap();
        prop_assert!(r[&1] <= r[&2] && r[&2] <= r[&3] && r[&3] <= r[&6]);
        prop_assert_eq!(r[&6], 1.0);
    }

    #[test]
    fn intent_accuracy_decomposes(golds in prop::collection::vec(0usize..4, 1..30), shift in 0usize..4) {
        let preds: Vec<usize> = golds.iter().enumerate().map(|(i, g)| if i % 3 == 0 { (g + shift) % 4 } else { *g }).collect();
        let s = intent_metrics(&preds, &golds, 0).unwrap();
        let n_in = golds.iter().filter(|&&g| g != 0).count() as f64;
        let n_out = golds.len() as f64 - n_in;
        let right_in = s.acc_in.map_or(0.0, |a| a * n_in);
        let right_out = s.recall_out.map_or(0.0, |r| r * n_out);
        prop_assert!((s.acc_all * golds.len() as f64 - right_in - right_out).abs() < 1e-9);
    }
}

#[test]
fn ties_rank_by_index() {
    assert_eq!(gold_rank(&[(0.5, false), (0.5, true)]), Some(2));
    assert_eq!(gold_rank(&[(0.5, true), (0.5, false)]), Some(1));
    assert_eq!(gold_rank(&[(0.1, false)]), None);
}

#[test]
fn input_errors() {
    assert_eq!(intent_metrics(&[1], &[1, 2], 0).unwrap_err(), MetricError::Length { preds: 1, golds: 2 });
    assert_eq!(intent_metrics(&[], &[], 0).unwrap_err(), MetricError::Empty);
    let ex = vec![vec![(0.1, true), (0.2, true)]];
    assert_eq!(recall_at_k(&ex, &[1], 2).unwrap_err(), MetricError::GoldCount { index: 0, found: 2 });
    assert_eq!(recall_at_k(&ex, &[1], 3).unwrap_err(), MetricError::Pool { index: 0, expected: 3, found: 2 });
    assert_eq!(recall_at_k(&ex, &[0], 2).unwrap_err(), MetricError::ZeroK);
    let a: BTreeMap<String, String> = [("x".to_string(), "1".to_string())].into();
    let b: BTreeMap<String, String> = [("y".to_string(), "1".to_string())].into();
    assert_eq!(dst_metrics(&[a], &[b]).unwrap_err(), MetricError::Keys { index: 0 });
}

#[test]
fn reports_average_over_seeds() {
    let one = |seed, joint: f64| {
        MetricReport::single(
            DownstreamTask::Dst,
            "sim",
            seed,
            [(ACC_JOINT.to_string(), joint), (ACC_SLOT.to_string(), 1.0)].into(),
        )
    };
    let agg = MetricReport::aggregate(&[one(1, 0.25), one(2, 0.5), one(3, 0.0)]).unwrap();
    assert_eq!(agg.seeds, vec![1, 2, 3]);
    assert!((agg.get(ACC_JOINT).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(agg.percent(ACC_SLOT), Some(100.0));
    assert_eq!(MetricReport::csv_header(DownstreamTask::Dst), "task,dataset,acc_joint,acc_slot");
    assert_eq!(agg.csv_row(), "DST,sim,25.00,100.00");
    let back: MetricReport = serde_json::from_str(&agg.to_json()).unwrap();
    assert_eq!(back, agg);
}
