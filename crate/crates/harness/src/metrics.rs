//! Classification metrics: rank AUC, macro one-vs-rest AUC, accuracy and
//! macro-F1.

use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Binary AUC from scores via average ranks (ties count one half).
/// `None` when either class is missing.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Mean of one-vs-rest AUCs over the classes present in `labels`.
/// `probs` is row-major `N×K`. Classes without negatives are skipped.
pub fn macro_auc(probs: &[f64], classes: usize, labels: &[usize]) -> Option<f64> {
    assert_eq!(probs.len(), labels.len() * classes);
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..classes {
        let scores: Vec<f64> = labels.iter().enumerate().map(|(i, _)| probs[i * classes + c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(auc) = binary_auc(&scores, &positive) {
            total += auc;
            used += 1;
        }
    }
    (used > 0).then(|| total / used as f64)
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predicted.len(), labels.len());
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(predicted: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        m[y][p] += 1;
    }
    m
}

/// Unweighted mean of per-class F1 over classes that occur as a label or a
/// prediction; a class with no true positives scores 0.
pub fn macro_f1_from_confusion(confusion: &[Vec<u64>]) -> f64 {
    let k = confusion.len();
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let actual: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        used += 1;
        let denom = actual as f64 + predicted as f64;
        total += if tp == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

pub fn macro_f1(predicted: &[usize], labels: &[usize], classes: usize) -> f64 {
    macro_f1_from_confusion(&confusion_matrix(predicted, labels, classes))
}

pub fn argmax_rows(probs: &[f64], classes: usize) -> Vec<usize> {
    probs
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Metrics of one evaluation, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub n: usize,
}

impl Metrics {
    pub fn from_probs(probs: &[f64], classes: usize, labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(HarnessError::EmptyTestSet);
        }
        let predicted = argmax_rows(probs, classes);
        // a single-class test set has no defined AUC; report chance
        let auc = macro_auc(probs, classes, labels).unwrap_or(0.5);
        Ok(Self {
            auc: 100.0 * auc,
            acc: 100.0 * accuracy(&predicted, labels),
            f1: 100.0 * macro_f1(&predicted, labels, classes),
            n: labels.len(),
        })
    }

    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        Metrics {
            auc: items.iter().map(|m| m.auc).sum::<f64>() / n,
            acc: items.iter().map(|m| m.acc).sum::<f64>() / n,
            f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
            n: items.iter().map(|m| m.n).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_auc_examples() {
        let a = binary_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(a, 1.0);
        let b = binary_auc(&[0.9, 0.3, 0.8, 0.1], &[true, false, false, true]).unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        assert_eq!(binary_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(binary_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn f1_example() {
        let f1 = macro_f1_from_confusion(&[vec![2, 0], vec![1, 1]]);
        assert!((f1 - 0.733_333_333).abs() < 1e-6);
    }

    #[test]
    fn absent_predictions_count_zero() {
        // class 1 never predicted: F1 = (2/3 + 0) / 2
        let f1 = macro_f1(&[0, 0, 0], &[0, 0, 1], 3);
        assert!((f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn macro_auc_skips_absent_classes() {
        let probs = [0.7, 0.2, 0.1, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1];
        let auc = macro_auc(&probs, 3, &[0, 1, 0]).unwrap();
        assert!((auc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn metrics_percentages() {
        let m = Metrics::from_probs(&[0.9, 0.1, 0.4, 0.6], 2, &[0, 1]).unwrap();
        assert_eq!((m.auc, m.acc, m.f1, m.n), (100.0, 100.0, 100.0, 2));
        assert!(matches!(Metrics::from_probs(&[], 2, &[]), Err(HarnessError::EmptyTestSet)));
    }
}
