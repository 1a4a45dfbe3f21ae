//! Threshold metrics, rank AUC and decision-threshold selection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Counts for the inclusive rule `score >= threshold`.
    pub fn at_threshold(scored: &[(f64, bool)], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for &(s, y) in scored {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 }
    }

    /// `2PR/(P+R)`, or 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mann-Whitney AUC with mid-ranks for ties. `None` unless both classes
/// are present.
pub fn auc(scored: &[(f64, bool)]) -> Option<f64> {
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if scored[k].1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Candidate thresholds `0.001, 0.002, ..., 0.999`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=999).map(|i| i as f64 / 1000.0)
}

/// Grid threshold maximizing F1 of `score >= t`; ties go to the smallest `t`.
/// Returns `None` unless both labels are present.
pub fn select_threshold(scored: &[(f64, bool)]) -> Option<f64> {
    let mut pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    // F1 = 2tp / (2tp + fp + fn), compared exactly so equal scores at
    // different thresholds really tie
    let mut best: Option<(f64, u128, u128)> = None;
    for t in threshold_grid() {
        let tp = pos.len() - pos.partition_point(|&s| s < t);
        let fp = neg.len() - neg.partition_point(|&s| s < t);
        let num = 2 * tp as u128;
        let den = num + (fp + pos.len() - tp) as u128;
        if best.is_none_or(|(_, bn, bd)| num * bd > bn * den) {
            best = Some((t, num, den));
        }
    }
    best.map(|(t, _, _)| t)
}
