//! Evaluation metrics: accuracy, ROC AUC (binary and macro one-vs-rest),
//! and the coefficient of determination.

use crate::error::{Error, Result};
use crate::num::Matrix;

/// Fraction of predictions equal to their label.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::contract(format!(
            "accuracy needs matching non-empty slices, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve for a binary problem, computed from the
/// Mann-Whitney statistic with tie-averaged ranks: the probability that a
/// random positive outscores a random negative, counting ties as half.
/// `None` when only one class is present.
pub fn binary_auc(scores: &[f64], positives: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positives.len() || scores.is_empty() {
        return Err(Error::contract(format!(
            "auc needs matching non-empty slices, got {} scores and {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "auc scores".to_string(),
        });
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }

    // Tie-averaged ranks (1-based).
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(positives.iter())
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Macro-averaged one-vs-rest AUC over `n_classes` columns of class
/// probabilities. Classes absent from the labels (or covering all of
/// them) are skipped; `None` if no class is scoreable.
pub fn macro_ovr_auc(probs: &Matrix, labels: &[usize], n_classes: usize) -> Result<Option<f64>> {
    if probs.rows() != labels.len() || probs.rows() == 0 {
        return Err(Error::contract(format!(
            "auc needs one probability row per label, got {} rows and {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.cols() < n_classes {
        return Err(Error::contract(format!(
            "auc over {n_classes} classes needs as many probability columns, got {}",
            probs.cols()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..n_classes {
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, c)).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if let Some(auc) = binary_auc(&scores, &pos)? {
            total += auc;
            counted += 1;
        }
    }
    Ok(if counted == 0 {
        None
    } else {
        Some(total / counted as f64)
    })
}

/// Coefficient of determination `1 - SS_res / SS_tot`. Errors when the
/// targets have no variance (the baseline is undefined).
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::contract(format!(
            "r_squared needs matching non-empty slices, got {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::contract(
            "r_squared undefined: targets are constant",
        ));
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}
