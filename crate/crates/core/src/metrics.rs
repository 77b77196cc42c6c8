//! Ranking metrics over anomaly scores: ROC-AUC (Mann–Whitney with
//! midranks), average precision and the ROC curve.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok((n_pos, labels.len() - n_pos))
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes"));
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
        // Ranks are 1-based; the tie group i..=j shares the midrank.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Order used by AP: score descending, then index ascending.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, _) = check(scores, labels)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &k) in ranking(scores).iter().enumerate() {
        if labels[k] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// ROC points from (0,0) to (1,1), one per distinct score threshold.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (n_pos, n_neg) = check(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes"));
    }
    let order = ranking(scores);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline of (x, y) points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<MetricsReport> {
    let (n_pos, n_neg) = check(scores, labels)?;
    Ok(MetricsReport {
        auc: roc_auc(scores, labels)?,
        ap: average_precision(scores, labels)?,
        n_pos,
        n_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Fraction of (positive, negative) pairs ranked correctly, ties half.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    const FOUR: [f64; 4] = [0.8, 0.6, 0.4, 0.2];
    const FOUR_LABELS: [bool; 4] = [true, false, true, false];

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&FOUR, &FOUR_LABELS).unwrap(), 0.75);
        assert_eq!(pairwise_auc(&FOUR, &FOUR_LABELS), 0.75);
        assert_eq!(roc_auc(&[0.3; 5], &[true, false, false, true, false]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
        let ap = average_precision(&FOUR, &FOUR_LABELS).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert!(average_precision(&[0.1], &[false]).is_err());
        // Ties fall back to index order.
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn curve_examples() {
        assert_eq!(
            roc_curve(&[0.9, 0.1], &[true, false]).unwrap(),
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        );
        assert_eq!(
            roc_curve(&[0.1, 0.9], &[true, false]).unwrap(),
            vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
        );
        let pts = roc_curve(&FOUR, &FOUR_LABELS).unwrap();
        assert!((trapezoid_area(&pts) - 0.75).abs() < 1e-12);
        assert!(roc_curve(&[0.1], &[true]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..30),
            bits in any::<u32>(),
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| bits >> (i % 32) & 1 == 1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let auc = roc_auc(&scores, &labels).unwrap();
            prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
            let pts = roc_curve(&scores, &labels).unwrap();
            prop_assert!((trapezoid_area(&pts) - auc).abs() < 1e-9);
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        }

        #[test]
        fn reversal_and_monotone_invariance(
            raw in proptest::collection::btree_set(-1000i32..1000, 2..20),
            bits in any::<u32>(),
        ) {
            let scores: Vec<f64> = raw.iter().rev().map(|&x| x as f64 / 10.0).collect();
            let labels: Vec<bool> = (0..scores.len()).map(|i| bits >> i & 1 == 1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let auc = roc_auc(&scores, &labels).unwrap();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - auc)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s / 50.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), auc);
            prop_assert_eq!(
                average_precision(&warped, &labels).unwrap(),
                average_precision(&scores, &labels).unwrap()
            );
        }
    }
}
