//! Confusion matrix, per-class F1 and macro-F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which classes enter the macro average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Classes appearing in the predictions or the ground truth.
    #[default]
    PresentClasses,
    /// All `C` classes, absent ones contributing an F1 of 0.
    AllClasses,
}

/// Confusion matrix (rows = true, columns = predicted) with derived scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_classes: usize,
    pub n: usize,
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized counts (per-class recall) when requested.
    pub normalized: Option<Vec<Vec<f64>>>,
    pub support: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
}

fn check(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("cannot score zero predictions"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= n_classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Builds the report. With `normalize`, rows with support are divided by
/// their sum so each holds per-class recall.
pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize, normalize: bool) -> Result<EvalReport> {
    confusion_with(pred, truth, n_classes, normalize, Averaging::PresentClasses)
}

pub fn confusion_with(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
    normalize: bool,
    averaging: Averaging,
) -> Result<EvalReport> {
    check(pred, truth, n_classes)?;
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[t][p] += 1;
    }
    let support: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<usize> = (0..n_classes).map(|c| counts.iter().map(|row| row[c]).sum()).collect();
    let mut precision = vec![0.0; n_classes];
    let mut recall = vec![0.0; n_classes];
    let mut f1 = vec![0.0; n_classes];
    for c in 0..n_classes {
        let tp = counts[c][c];
        precision[c] = ratio(tp, predicted[c]);
        recall[c] = ratio(tp, support[c]);
        let (p, r) = (precision[c], recall[c]);
        f1[c] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let included: Vec<usize> = (0..n_classes)
        .filter(|&c| averaging == Averaging::AllClasses || support[c] > 0 || predicted[c] > 0)
        .collect();
    let macro_f1 = included.iter().map(|&c| f1[c]).sum::<f64>() / included.len() as f64;
    let normalized = normalize.then(|| {
        counts
            .iter()
            .zip(&support)
            .map(|(row, &s)| row.iter().map(|&v| ratio(v, s)).collect())
            .collect()
    });
    Ok(EvalReport {
        n_classes,
        n: pred.len(),
        counts,
        normalized,
        support,
        precision,
        recall,
        f1,
        macro_f1,
    })
}

/// Unweighted mean of per-class F1 over classes present in either sequence.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    confusion(pred, truth, n_classes, false).map(|r| r.macro_f1)
}

pub fn macro_f1_with(pred: &[usize], truth: &[usize], n_classes: usize, averaging: Averaging) -> Result<f64> {
    confusion_with(pred, truth, n_classes, false, averaging).map(|r| r.macro_f1)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    ratio(hits, pred.len())
}

impl EvalReport {
    /// `true_class,pred_class,normalized_value` rows for heatmap plotting.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("true_class,pred_class,normalized_value\n");
        for t in 0..self.n_classes {
            for p in 0..self.n_classes {
                let v = ratio(self.counts[t][p], self.support[t]);
                out.push_str(&format!("{t},{p},{v}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_macro() {
        let m = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((m - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0], 19).unwrap(), 1.0);
    }

    #[test]
    fn all_class_averaging_counts_absent() {
        let m = macro_f1_with(&[0, 1], &[0, 1], 4, Averaging::AllClasses).unwrap();
        assert_eq!(m, 0.5);
    }

    #[test]
    fn normalized_rows() {
        let r = confusion(&[0, 1, 1, 2, 2, 2], &[0, 0, 1, 1, 2, 2], 4, true).unwrap();
        assert_eq!(r.support, vec![2, 2, 2, 0]);
        let norm = r.normalized.unwrap();
        for (row, &s) in norm.iter().zip(&r.support) {
            let sum: f64 = row.iter().sum();
            if s > 0 {
                assert!((sum - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(sum, 0.0);
            }
        }
        assert_eq!(r.counts.iter().flatten().sum::<usize>(), 6);
    }

    #[test]
    fn errors() {
        assert!(macro_f1(&[], &[], 3).is_err());
        assert!(macro_f1(&[0], &[0, 1], 3).is_err());
        assert!(macro_f1(&[3], &[0], 3).is_err());
    }
}
