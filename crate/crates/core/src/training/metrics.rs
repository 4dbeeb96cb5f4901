//! Ranking metrics computed exactly.

/// Area under the ROC curve by the rank-sum route; tied scores receive
/// mid-ranks, which credits tied positive/negative pairs one half each.
/// `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie group shares the average rank.
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: sweep thresholds down the score range with tied
/// scores grouped, accumulating precision-weighted recall increments.
/// `None` when only one class is present.
pub fn avg_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    let mut recall_prev = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j + 1;
    }
    Some(ap)
}

/// Mean absolute error over present (non-NaN) target entries.
pub fn mae(preds: &[f64], targets: &[f64]) -> Option<f64> {
    debug_assert_eq!(preds.len(), targets.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for (&p, &t) in preds.iter().zip(targets) {
        if !t.is_nan() {
            total += (p - t).abs();
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_perfect_ranking() {
        let auc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 1.0);
        let ap = avg_precision(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let auc = roc_auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert!((auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_three_of_four_pairs() {
        // Concordant pairs: 3 of 4.
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_none());
        assert!(avg_precision(&[0.1, 0.2], &[false, false]).is_none());
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.05, 0.6];
        let labels = [false, true, false, true, false, true];
        let base = roc_auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).tanh()).collect();
        assert_eq!(base, roc_auc(&squashed, &labels).unwrap());
    }

    #[test]
    fn mae_skips_missing() {
        let got = mae(&[1.0, 5.0], &[0.0, f64::NAN]).unwrap();
        assert_eq!(got, 1.0);
    }
}
