//! Evaluation metrics: accuracy and macro-averaged F1 for classification,
//! MAE and RMSE for regression.

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InvalidMetricInput("empty prediction list".into()));
    }
    if a != b {
        return Err(Error::InvalidMetricInput(format!(
            "length mismatch: {a} predictions vs {b} targets"
        )));
    }
    Ok(())
}

/// Fraction of exactly matching labels.
pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Unweighted mean of per-class F1 over the classes present in `truth`.
/// A class with zero precision and recall contributes an F1 of zero;
/// classes absent from the truth are excluded from the mean.
pub fn macro_f1(preds: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    if classes < 2 {
        return Err(Error::InvalidMetricInput(
            "macro F1 needs at least 2 classes".into(),
        ));
    }
    for &l in preds.iter().chain(truth) {
        if l >= classes {
            return Err(Error::InvalidMetricInput(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fal_n = vec![0usize; classes];
    for (&p, &t) in preds.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fal_n[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        if tp[c] + fal_n[c] == 0 {
            continue; // class absent from truth
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fal_n[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(sum / present as f64)
}

/// Mean absolute error.
pub fn mae(preds: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    let sum: f64 = preds.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / preds.len() as f64)
}

/// Root mean squared error. Always at least the MAE.
pub fn rmse(preds: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    let sum: f64 = preds
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / preds.len() as f64).sqrt())
}
