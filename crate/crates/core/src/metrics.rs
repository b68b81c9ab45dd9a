//! Classification metrics over scored pairs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub id_a: u64,
    pub id_b: u64,
    pub score: f64,
    pub label: u8,
}

impl ScoredPair {
    pub fn new(id_a: u64, id_b: u64, score: f64, label: u8) -> Self {
        ScoredPair {
            id_a,
            id_b,
            score,
            label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when nothing was predicted positive and precision was reported as 0.
    pub precision_undefined: bool,
}

fn validate(scored: &[ScoredPair]) -> Result<()> {
    if scored.is_empty() {
        return Err(Error::EmptyInput("no scored pairs".into()));
    }
    for s in scored {
        if !s.score.is_finite() || !(0.0..=1.0).contains(&s.score) || s.label > 1 {
            return Err(Error::Input(format!(
                "invalid scored pair ({}, {}): score {}, label {}",
                s.id_a, s.id_b, s.score, s.label
            )));
        }
    }
    Ok(())
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Confusion-matrix metrics predicting positive iff `score >= threshold`.
pub fn confusion_metrics(scored: &[ScoredPair], threshold: f64) -> Result<MetricsReport> {
    validate(scored)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in scored {
        match (s.score >= threshold, s.label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scored.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let auroc = match auroc(scored) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        n,
        threshold,
        accuracy: ratio(tp + tn, n),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: f1_from_counts(tp, fp, fn_),
        auroc,
        tp,
        fp,
        tn,
        fn_,
        precision_undefined: tp + fp == 0,
    })
}

/// Area under the ROC curve in its Mann-Whitney form: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
///
/// Ranks are kept doubled so that tie-averaged ranks stay integral; the
/// result is a single division of two exact integers.
pub fn auroc(scored: &[ScoredPair]) -> Result<f64> {
    validate(scored)?;
    let pos = scored.iter().filter(|s| s.label == 1).count() as u128;
    let neg = scored.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "auROC needs both positive and negative pairs".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].score.total_cmp(&scored[b].score));
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scored[order[end]].score == scored[order[start]].score {
            end += 1;
        }
        // positions start..end share ranks start+1..=end; twice their mean
        let doubled = (start + 1 + end) as u128;
        let group_pos = order[start..end]
            .iter()
            .filter(|&&i| scored[i].label == 1)
            .count() as u128;
        doubled_rank_sum += doubled * group_pos;
        start = end;
    }
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}

/// Threshold maximizing F1 among midpoints between consecutive distinct
/// observed scores, preferring the smallest on ties. Falls back to 0.5
/// when the set has a single class or a single distinct score.
pub fn select_threshold(scored: &[ScoredPair]) -> Result<f64> {
    validate(scored)?;
    let pos_total = scored.iter().filter(|s| s.label == 1).count();
    if pos_total == 0 || pos_total == scored.len() {
        log::warn!("threshold selection on a single-class set; using {DEFAULT_THRESHOLD}");
        return Ok(DEFAULT_THRESHOLD);
    }
    let mut sorted: Vec<(f64, u8)> = scored.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // sweep from the top: after consuming a group, everything seen so far
    // is predicted positive for the midpoint just below that group
    let mut best: Option<(f64, f64)> = None;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let mid = (v + sorted[i].0) / 2.0;
        let f1 = f1_from_counts(tp, fp, pos_total - tp);
        // descending sweep: ">=" lets a later (smaller) threshold win ties
        if best.map_or(true, |(bf, _)| f1 >= bf) {
            best = Some((f1, mid));
        }
    }
    match best {
        Some((_, t)) => Ok(t),
        None => {
            log::warn!("all scores equal; using threshold {DEFAULT_THRESHOLD}");
            Ok(DEFAULT_THRESHOLD)
        }
    }
}

/// Aligned two-column plain-text rendering of a report.
pub fn render_table(report: &MetricsReport) -> String {
    let auroc = report
        .auroc
        .map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
    let precision = if report.precision_undefined {
        format!("{:.4} (no positive predictions)", report.precision)
    } else {
        format!("{:.4}", report.precision)
    };
    let rows = [
        ("pairs", report.n.to_string()),
        ("threshold", format!("{:.4}", report.threshold)),
        ("accuracy", format!("{:.4}", report.accuracy)),
        ("precision", precision),
        ("recall", format!("{:.4}", report.recall)),
        ("f1", format!("{:.4}", report.f1)),
        ("auroc", auroc),
        ("tp", report.tp.to_string()),
        ("fp", report.fp.to_string()),
        ("tn", report.tn.to_string()),
        ("fn", report.fn_.to_string()),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}
