//! Classification and regression metrics.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

fn check_pair(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a == 0 || b == 0 {
        return Err(Error::Empty(op));
    }
    if a != b {
        return Err(Error::dim(op, (a, 1), (b, 1)));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    check_pair("accuracy", pred.len(), target.len())?;
    let hits = pred.iter().zip(target).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Per-class `(tp, fp, fn)` over the labels present in either input.
fn class_counts(pred: &[usize], target: &[usize]) -> Vec<(usize, usize, usize)> {
    let labels: BTreeSet<usize> = pred.iter().chain(target).copied().collect();
    labels
        .into_iter()
        .map(|c| {
            let mut counts = (0, 0, 0);
            for (&p, &t) in pred.iter().zip(target) {
                match (p == c, t == c) {
                    (true, true) => counts.0 += 1,
                    (true, false) => counts.1 += 1,
                    (false, true) => counts.2 += 1,
                    _ => {}
                }
            }
            counts
        })
        .collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 from counts pooled over classes.
pub fn micro_f1(pred: &[usize], target: &[usize]) -> Result<f64> {
    check_pair("micro_f1", pred.len(), target.len())?;
    let (tp, fp, fn_) = class_counts(pred, target)
        .into_iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(f1(tp, fp, fn_))
}

/// Unweighted mean of per-class F1 over every label seen in either input.
pub fn macro_f1(pred: &[usize], target: &[usize]) -> Result<f64> {
    check_pair("macro_f1", pred.len(), target.len())?;
    let counts = class_counts(pred, target);
    Ok(counts
        .iter()
        .map(|&(tp, fp, fn_)| f1(tp, fp, fn_))
        .sum::<f64>()
        / counts.len() as f64)
}

fn check_binary(op: &'static str, scores: &[f64], positive: &[bool]) -> Result<()> {
    check_pair(op, scores.len(), positive.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("{op} received a non-finite score")));
    }
    Ok(())
}

/// Area under the precision-recall step curve; tied scores form one threshold.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    check_binary("average_precision", scores, positive)?;
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs a positive target".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            tp += usize::from(positive[order[j]]);
            seen += 1;
            j += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - last_recall) * tp as f64 / seen as f64;
        last_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Mann-Whitney statistic with mid-ranks for tied scores.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    check_binary("auroc", scores, positive)?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "auroc needs both classes in the targets".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("rmse", pred.len(), target.len())?;
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("mae", pred.len(), target.len())?;
    let abs: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(abs / pred.len() as f64)
}

/// Range each named metric must lie in.
pub fn valid_range(name: &str) -> (f64, f64) {
    let base = name.rsplit('_').next().unwrap_or(name);
    match base {
        "rmse" | "mae" | "loss" => (0.0, f64::INFINITY),
        _ => (0.0, 1.0),
    }
}
