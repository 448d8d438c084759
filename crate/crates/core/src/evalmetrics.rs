//! Ranking and thresholded classification metrics, the 3MCS composite and
//! isotonic calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Average precision: sum over descending distinct thresholds of
/// `(recall_k - recall_{k-1}) * precision_k`.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut prev_tp) = (0usize, 0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        ap += (tp - prev_tp) as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcc {
    pub value: f64,
    /// True when a confusion-matrix margin is empty and the value is set to 0.
    pub degenerate: bool,
}

pub fn mcc(pred: &[bool], labels: &[bool]) -> Result<Mcc> {
    if pred.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (p, l) in pred.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let denom: f64 = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(Mcc {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Mcc {
        value: (tp * tn - fp * fn_) / denom.sqrt(),
        degenerate: false,
    })
}

pub fn three_mcs(auroc: f64, auprc: f64, mcc: f64) -> f64 {
    auroc * auprc * (1.0 + mcc) / 2.0
}

/// Non-decreasing step function fitted by pool-adjacent-violators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCalibrator {
    /// Lowest score of each pooled block, ascending.
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicCalibrator {
    pub fn identity() -> Self {
        Self {
            thresholds: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn apply(&self, s: f64) -> f64 {
        if self.is_identity() {
            return s.clamp(0.0, 1.0);
        }
        let k = self.thresholds.partition_point(|t| *t <= s);
        self.values[k.saturating_sub(1)].clamp(0.0, 1.0)
    }
}

/// Fits the calibrator; fewer than two distinct scores give the identity.
pub fn isotonic_calibrate(scores: &[f64], labels: &[bool]) -> Result<IsotonicCalibrator> {
    check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // (first score, label sum, count)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &idx {
        let y = labels[i] as u8 as f64;
        match blocks.last_mut() {
            Some(b) if b.0 == scores[i] => {
                b.1 += y;
                b.2 += 1.0;
            }
            _ => blocks.push((scores[i], y, 1.0)),
        }
    }
    if blocks.len() < 2 {
        return Ok(IsotonicCalibrator::identity());
    }
    let mut stack: Vec<(f64, f64, f64)> = Vec::with_capacity(blocks.len());
    for b in blocks {
        stack.push(b);
        while stack.len() >= 2 {
            let last = stack[stack.len() - 1];
            let prev = stack[stack.len() - 2];
            if prev.1 / prev.2 > last.1 / last.2 {
                stack.pop();
                let p = stack.last_mut().unwrap();
                p.1 += last.1;
                p.2 += last.2;
            } else {
                break;
            }
        }
    }
    Ok(IsotonicCalibrator {
        thresholds: stack.iter().map(|b| b.0).collect(),
        values: stack.iter().map(|b| b.1 / b.2).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: f64,
    pub auprc: f64,
    pub mcc: f64,
    pub three_mcs: f64,
}

/// All four metrics, MCC from calibrated scores thresholded at 0.5.
pub fn evaluate(scores: &[f64], labels: &[bool], calibrator: &IsotonicCalibrator) -> Result<Metrics> {
    let a = auroc(scores, labels)?;
    let p = auprc(scores, labels)?;
    let pred: Vec<bool> = scores.iter().map(|s| calibrator.apply(*s) >= 0.5).collect();
    let m = mcc(&pred, labels)?.value;
    Ok(Metrics {
        auroc: a,
        auprc: p,
        mcc: m,
        three_mcs: three_mcs(a, p, m),
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
