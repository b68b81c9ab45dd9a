use dupforge::metrics::{auroc, confusion_metrics, select_threshold, ScoredPair};
use proptest::prelude::*;

/// Counts (positive, negative) orderings directly.
fn brute_auroc(scored: &[ScoredPair]) -> Option<f64> {
    let pos: Vec<f64> = scored.iter().filter(|s| s.label == 1).map(|s| s.score).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| s.label == 0).map(|s| s.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut twice = 0u128;
    for p in &pos {
        for n in &neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    Some(twice as f64 / (2 * pos.len() * neg.len()) as f64)
}

fn f1_at(scored: &[ScoredPair], t: f64) -> f64 {
    let tp = scored.iter().filter(|s| s.score >= t && s.label == 1).count();
    let fp = scored.iter().filter(|s| s.score >= t && s.label == 0).count();
    let fn_ = scored.iter().filter(|s| s.score < t && s.label == 1).count();
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn instances() -> impl Strategy<Value = Vec<ScoredPair>> {
    prop::collection::vec((0u32..=20, 0u8..=1), 1..120).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (k, l))| ScoredPair::new(i as u64, i as u64 + 1000, k as f64 / 20.0, l))
            .collect()
    })
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting(scored in instances()) {
        match brute_auroc(&scored) {
            Some(expect) => prop_assert_eq!(auroc(&scored).unwrap(), expect),
            None => prop_assert!(auroc(&scored).is_err()),
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_map(scored in instances()) {
        prop_assume!(brute_auroc(&scored).is_some());
        let mapped: Vec<ScoredPair> = scored
            .iter()
            .map(|s| ScoredPair::new(s.id_a, s.id_b, s.score.sqrt(), s.label))
            .collect();
        prop_assert_eq!(auroc(&scored).unwrap(), auroc(&mapped).unwrap());
        let flipped: Vec<ScoredPair> = scored
            .iter()
            .map(|s| ScoredPair::new(s.id_a, s.id_b, s.score, 1 - s.label))
            .collect();
        prop_assert!((auroc(&scored).unwrap() + auroc(&flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_partition(scored in instances(), t in 0.0f64..1.0) {
        let r = confusion_metrics(&scored, t).unwrap();
        prop_assert_eq!(r.tp + r.fp + r.tn + r.fn_, scored.len());
        prop_assert_eq!(r.tp + r.fn_, scored.iter().filter(|s| s.label == 1).count());
        for m in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn selected_threshold_maximizes_f1(scored in instances()) {
        let t = select_threshold(&scored).unwrap();
        let best = f1_at(&scored, t);
        let mut distinct: Vec<f64> = scored.iter().map(|s| s.score).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for w in distinct.windows(2) {
            prop_assert!(best >= f1_at(&scored, 0.5 * (w[0] + w[1])));
        }
    }
}
