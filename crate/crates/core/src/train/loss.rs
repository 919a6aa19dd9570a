use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Real;

/// Label-smoothed, class-weighted cross-entropy for one example.
///
/// The target is `q = (1-ε)·onehot(c) + ε/C`; the loss is
/// `w_c · Σ_k -q_k log p_k` and its gradient with respect to the logits is
/// `w_c · (p - q)`.
pub fn smoothed_ce_loss<F: Real>(logits: &[F], target: usize, smoothing: f64, weight: f64) -> Result<(F, Vec<F>)> {
    let c = logits.len();
    if target >= c {
        return Err(Error::invalid(format!("target {target} outside 0..{c}")));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid("label smoothing must lie in [0, 1)"));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln();
    let off = F::lit(smoothing / c as f64);
    let on = F::lit(1.0 - smoothing) + off;
    let w = F::lit(weight);
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(c);
    for (k, &z) in logits.iter().enumerate() {
        let q = if k == target { on } else { off };
        let log_p = z - lse;
        loss -= q * log_p;
        grad.push(w * (log_p.exp() - q));
    }
    Ok((w * loss, grad))
}

/// Per-class loss weights with mean 1 over the classes present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights(vec![1.0; n_classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }
}

/// `w_c ∝ 1/sqrt(n_c)`, rescaled to mean 1 over classes with `n_c > 0`.
/// Absent classes get weight 0.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present == 0 {
        return Err(Error::invalid("class counts are all zero"));
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| if n > 0 { 1.0 / (n as f64).sqrt() } else { 0.0 })
        .collect();
    let mean = raw.iter().sum::<f64>() / present as f64;
    Ok(ClassWeights(raw.into_iter().map(|w| w / mean).collect()))
}
