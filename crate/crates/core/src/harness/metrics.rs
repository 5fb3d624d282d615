use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean relative accuracy over the thresholds θ ∈ {0.50, 0.55, …, 0.95}.
///
/// Threshold `i` passes when `|pred - gt| / gt < 1 - θ_i`, evaluated exactly
/// as `20 |pred - gt| < (10 - i) gt`.
pub fn mra(pred: u64, gt: u64) -> Result<f64> {
    if gt == 0 {
        return Err(Error::InvalidInput("mra needs a positive ground truth".into()));
    }
    let err = 20 * u128::from(pred.abs_diff(gt));
    let passed = (0..10u128).filter(|i| err < (10 - i) * u128::from(gt)).count();
    Ok(passed as f64 / 10.0)
}

/// Fraction of positions where `predicted[i] == correct[i]`; 0 for no questions.
pub fn choice_accuracy(predicted: &[usize], correct: &[usize]) -> Result<f64> {
    if predicted.len() != correct.len() {
        return Err(Error::InvalidInput(format!(
            "{} answers for {} questions",
            predicted.len(),
            correct.len()
        )));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(correct).filter(|(p, c)| p == c).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl BoundaryCounts {
    pub fn add(&mut self, other: BoundaryCounts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }

    pub fn prf(&self) -> Prf {
        let tp = self.true_positives as f64;
        let predicted = tp + self.false_positives as f64;
        let actual = tp + self.false_negatives as f64;
        if predicted == 0.0 && actual == 0.0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy one-to-one matching: predictions are visited in time order and each
/// takes the closest unmatched ground-truth boundary within `±tolerance`
/// (the earlier one on a tie).
pub fn match_boundaries(predicted: &[u64], truth: &[u64], tolerance: u64) -> BoundaryCounts {
    let mut pred = predicted.to_vec();
    pred.sort_unstable();
    let mut gt = truth.to_vec();
    gt.sort_unstable();
    let mut used = vec![false; gt.len()];
    let mut tp = 0;
    for p in pred.iter() {
        let lo = gt.partition_point(|&g| g + tolerance < *p);
        let best = (lo..gt.len())
            .take_while(|&j| gt[j] <= p + tolerance)
            .filter(|&j| !used[j])
            .min_by_key(|&j| gt[j].abs_diff(*p));
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
    }
    BoundaryCounts {
        true_positives: tp,
        false_positives: pred.len() - tp,
        false_negatives: gt.len() - tp,
    }
}

pub fn boundary_prf(predicted: &[u64], truth: &[u64], tolerance: u64) -> Prf {
    match_boundaries(predicted, truth, tolerance).prf()
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidInput("auroc needs both positives and negatives".into()));
    }
    if positives.iter().chain(negatives).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("auroc scores must not be NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += mid_rank * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("pearson needs two equal-length series of at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
