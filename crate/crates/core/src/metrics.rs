//! Evaluation metrics for the four downstream tasks.
//!
//! The functions return fractions in `[0, 1]`; reports convert to
//! percentages at the presentation boundary only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::DownstreamTask;

pub const F1_MICRO: &str = "f1_micro";
pub const F1_MACRO: &str = "f1_macro";
pub const ACC_ALL: &str = "Acc (all)";
pub const ACC_IN: &str = "Acc (in)";
pub const ACC_OUT: &str = "Acc (out)";
pub const RECALL_OUT: &str = "Recall (out)";
pub const R100_1: &str = "R_100@1";
pub const R100_3: &str = "R_100@3";
pub const ACC_JOINT: &str = "acc_joint";
pub const ACC_SLOT: &str = "acc_slot";

/// Metric columns reported for each downstream task, in table order.
pub fn metric_names(task: DownstreamTask) -> &'static [&'static str] {
    match task {
        DownstreamTask::Da => &[F1_MICRO, F1_MACRO],
        DownstreamTask::Int => &[ACC_ALL, ACC_IN, ACC_OUT, RECALL_OUT],
        DownstreamTask::Rs => &[R100_1, R100_3],
        DownstreamTask::Dst => &[ACC_JOINT, ACC_SLOT],
    }
}

/// Out-of-scope detection accuracy is a declared reading of an undefined
/// column; reports carry this note next to it.
pub const ACC_OUT_NOTE: &str =
    "Acc (out) is binary in-scope/out-of-scope detection accuracy over all examples.";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{preds} predictions for {golds} gold labels")]
    Length { preds: usize, golds: usize },
    #[error("no examples to score")]
    Empty,
    #[error("example {index}: expected {expected} candidates, found {found}")]
    Pool { index: usize, expected: usize, found: usize },
    #[error("example {index}: expected exactly one gold candidate, found {found}")]
    GoldCount { index: usize, found: usize },
    #[error("turn {index}: prediction and gold cover different (domain, slot) pairs")]
    Keys { index: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_lengths(preds: usize, golds: usize) -> Result<()> {
    if preds != golds {
        return Err(MetricError::Length { preds, golds });
    }
    if golds == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Micro and macro F1 for multi-label predictions. Macro F1 averages over
/// `inventory`, extended with any label that appears in the data; labels
/// never predicted nor gold score 0.
pub fn f1_multilabel<L: Ord + Clone>(
    preds: &[BTreeSet<L>],
    golds: &[BTreeSet<L>],
    inventory: &[L],
) -> Result<(f64, f64)> {
    check_lengths(preds.len(), golds.len())?;
    let mut counts: BTreeMap<L, (usize, usize, usize)> =
        inventory.iter().map(|l| (l.clone(), (0, 0, 0))).collect();
    for (p, g) in preds.iter().zip(golds) {
        for l in p.union(g) {
            let c = counts.entry(l.clone()).or_default();
            match (p.contains(l), g.contains(l)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let micro = f1(tp, fp, fn_);
    let macro_ = if counts.is_empty() {
        0.0
    } else {
        counts.values().map(|&(t, p, n)| f1(t, p, n)).sum::<f64>() / counts.len() as f64
    };
    Ok((micro, macro_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentScores {
    pub acc_all: f64,
    pub acc_in: Option<f64>,
    pub acc_out: f64,
    /// Absent when the gold labels contain no out-of-scope example.
    pub recall_out: Option<f64>,
}

pub fn intent_metrics(preds: &[usize], golds: &[usize], oos_class: usize) -> Result<IntentScores> {
    check_lengths(preds.len(), golds.len())?;
    let n = golds.len() as f64;
    let pairs = || preds.iter().zip(golds);
    let correct = pairs().filter(|(p, g)| p == g).count();
    let in_scope: Vec<_> = pairs().filter(|(_, g)| **g != oos_class).collect();
    let out_scope: Vec<_> = pairs().filter(|(_, g)| **g == oos_class).collect();
    let acc_in = (!in_scope.is_empty())
        .then(|| in_scope.iter().filter(|(p, g)| p == g).count() as f64 / in_scope.len() as f64);
    let recall_out = (!out_scope.is_empty()).then(|| {
        out_scope.iter().filter(|(p, _)| **p == oos_class).count() as f64 / out_scope.len() as f64
    });
    let detect = pairs()
        .filter(|(p, g)| (**p == oos_class) == (**g == oos_class))
        .count();
    Ok(IntentScores {
        acc_all: correct as f64 / n,
        acc_in,
        acc_out: detect as f64 / n,
        recall_out,
    })
}

/// 1-based rank of the gold candidate under descending score, ties broken
/// by candidate index.
pub fn gold_rank(candidates: &[(f64, bool)]) -> Option<usize> {
    let g = candidates.iter().position(|c| c.1)?;
    let gs = candidates[g].0;
    let ahead = candidates
        .iter()
        .enumerate()
        .filter(|&(i, &(s, _))| s > gs || (s == gs && i < g))
        .count();
    Some(ahead + 1)
}

/// Recall@k over examples of exactly `pool` candidates with one gold each.
pub fn recall_at_k(scores: &[Vec<(f64, bool)>], ks: &[usize], pool: usize) -> Result<BTreeMap<usize, f64>> {
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if ks.contains(&0) {
        return Err(MetricError::ZeroK);
    }
    let mut ranks = Vec::with_capacity(scores.len());
    for (index, ex) in scores.iter().enumerate() {
        if ex.len() != pool {
            return Err(MetricError::Pool {
                index,
                expected: pool,
                found: ex.len(),
            });
        }
        let found = ex.iter().filter(|c| c.1).count();
        if found != 1 {
            return Err(MetricError::GoldCount { index, found });
        }
        ranks.push(gold_rank(ex).expect("one gold"));
    }
    let n = ranks.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect())
}

/// Joint and per-slot accuracy over turns of `pair -> value` maps.
pub fn dst_metrics(preds: &[BTreeMap<String, String>], golds: &[BTreeMap<String, String>]) -> Result<(f64, f64)> {
    check_lengths(preds.len(), golds.len())?;
    let mut joint = 0;
    let mut slots = 0;
    let mut slot_total = 0;
    for (index, (p, g)) in preds.iter().zip(golds).enumerate() {
        if !p.keys().eq(g.keys()) {
            return Err(MetricError::Keys { index });
        }
        let right = p.iter().zip(g).filter(|((_, a), (_, b))| a == b).count();
        slots += right;
        slot_total += g.len();
        if right == g.len() {
            joint += 1;
        }
    }
    let acc_slot = if slot_total == 0 { 1.0 } else { slots as f64 / slot_total as f64 };
    Ok((joint as f64 / golds.len() as f64, acc_slot))
}

/// Metric values for one (task, dataset) cell, with seed replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: DownstreamTask,
    pub dataset: String,
    /// Seed means, as fractions.
    pub values: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
    /// One map per seed, aligned with `seeds`.
    pub per_seed: Vec<BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn single(task: DownstreamTask, dataset: impl Into<String>, seed: u64, values: BTreeMap<String, f64>) -> Self {
        Self {
            task,
            dataset: dataset.into(),
            values: values.clone(),
            seeds: vec![seed],
            per_seed: vec![values],
        }
    }

    /// Merges single-seed reports of the same cell. A metric's mean is over
    /// the seeds that reported it.
    pub fn aggregate(reports: &[MetricReport]) -> Option<Self> {
        let first = reports.first()?;
        let mut seeds = Vec::new();
        let mut per_seed = Vec::new();
        for r in reports {
            seeds.extend(&r.seeds);
            per_seed.extend(r.per_seed.iter().cloned());
        }
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for m in &per_seed {
            for (k, v) in m {
                let e = sums.entry(k.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        Some(Self {
            task: first.task,
            dataset: first.dataset.clone(),
            values: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            seeds,
            per_seed,
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values.get(metric).copied()
    }

    /// Percentage for presentation.
    pub fn percent(&self, metric: &str) -> Option<f64> {
        self.get(metric).map(|v| 100.0 * v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(task: DownstreamTask) -> String {
        let mut s = String::from("task,dataset");
        for m in metric_names(task) {
            s.push(',');
            s.push_str(m);
        }
        s
    }

    /// `task,dataset,<metrics...>` with percentages to two decimals; absent
    /// metrics are empty.
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.task, self.dataset);
        for m in metric_names(self.task) {
            s.push(',');
            if let Some(v) = self.percent(m) {
                let _ = write!(s, "{v:.2}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(xs: &[&'static str]) -> BTreeSet<&'static str> {
        xs.iter().copied().collect()
    }

    #[test]
    fn f1_worked_case() {
        let (micro, macro_) =
            f1_multilabel(&[set(&["A"]), set(&["A"])], &[set(&["A"]), set(&["B"])], &["A", "B"]).unwrap();
        assert_abs_diff_eq!(micro, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(macro_, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn f1_absent_inventory_labels_count_zero() {
        let (_, macro_) = f1_multilabel(&[set(&["A"])], &[set(&["A"])], &["A", "B", "C"]).unwrap();
        assert_abs_diff_eq!(macro_, 1.0 / 3.0, epsilon = 1e-12);
        assert!(f1_multilabel::<&str>(&[set(&["A"])], &[], &[]).is_err());
    }

    #[test]
    fn intent_without_oos() {
        let s = intent_metrics(&[0, 1, 2], &[0, 1, 1], 9).unwrap();
        assert!(s.recall_out.is_none());
        assert_abs_diff_eq!(s.acc_all, 2.0 / 3.0);
        assert_abs_diff_eq!(s.acc_out, 1.0);
    }

    #[test]
    fn recall_rank_two() {
        let ex = vec![(0.9, false), (0.5, true), (0.1, false)];
        let r = recall_at_k(&[ex], &[1, 3], 3).unwrap();
        assert_eq!(r[&1], 0.0);
        assert_eq!(r[&3], 1.0);
    }

    #[test]
    fn ties_favor_lower_index() {
        assert_eq!(gold_rank(&[(0.5, false), (0.5, true)]), Some(2));
        assert_eq!(gold_rank(&[(0.5, true), (0.5, false)]), Some(1));
    }

    #[test]
    fn pool_checks() {
        assert!(matches!(
            recall_at_k(&[vec![(0.1, true)]], &[1], 2),
            Err(MetricError::Pool { .. })
        ));
        assert!(matches!(
            recall_at_k(&[vec![(0.1, true), (0.2, true)]], &[1], 2),
            Err(MetricError::GoldCount { found: 2, .. })
        ));
    }

    #[test]
    fn dst_worked_case() {
        let m = |a: &str, b: &str| -> BTreeMap<String, String> {
            [("p1".to_string(), a.to_string()), ("p2".to_string(), b.to_string())].into()
        };
        let (joint, slot) = dst_metrics(&[m("x", "WRONG"), m("x", "y")], &[m("x", "y"), m("x", "y")]).unwrap();
        assert_abs_diff_eq!(slot, 0.75);
        assert_abs_diff_eq!(joint, 0.5);
        let mut other = m("x", "y");
        other.insert("p3".into(), "z".into());
        assert!(dst_metrics(&[other], &[m("x", "y")]).is_err());
    }

    #[test]
    fn report_csv_and_aggregate() {
        let a = MetricReport::single(DownstreamTask::Rs, "MWOZ", 1, [(R100_1.into(), 0.5), (R100_3.into(), 1.0)].into());
        let b = MetricReport::single(DownstreamTask::Rs, "MWOZ", 2, [(R100_1.into(), 0.25), (R100_3.into(), 0.5)].into());
        let agg = MetricReport::aggregate(&[a, b]).unwrap();
        assert_eq!(agg.seeds, vec![1, 2]);
        assert_abs_diff_eq!(agg.get(R100_1).unwrap(), 0.375);
        assert_eq!(MetricReport::csv_header(DownstreamTask::Rs), "task,dataset,R_100@1,R_100@3");
        assert_eq!(agg.csv_row(), "RS,MWOZ,37.50,75.00");
    }
}
