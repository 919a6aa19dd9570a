//! Scalar temperature scaling and expected calibration error.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softmax, ProbVector};

/// Search interval for the temperature.
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
/// Width of the final golden-section bracket.
pub const T_TOL: f64 = 1e-4;
/// Default equal-width bin count for ECE.
pub const ECE_BINS: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub bins: usize,
    /// Set when fewer than two classes were present and T was left at 1.
    #[serde(default)]
    pub degenerate: bool,
}

/// `softmax(logits / T)`.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    softmax(&scaled)
}

fn log_sum_exp(z: &[f64], inv_t: f64) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) * inv_t;
    max + z.iter().map(|&v| (v * inv_t - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `softmax(logits / T)`.
pub fn mean_nll(logits: &[Vec<f64>], labels: &[usize], temperature: f64) -> f64 {
    let inv_t = 1.0 / temperature;
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| log_sum_exp(z, inv_t) - z[y] * inv_t)
        .sum::<f64>()
        / logits.len() as f64
}

fn validate(logits: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::invalid("no logits to calibrate"));
    }
    if logits.len() != labels.len() {
        return Err(Error::invalid("logits and labels differ in length"));
    }
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::invalid(format!("label {y} outside 0..{}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite calibration logit"));
        }
    }
    Ok(())
}

/// Golden-section search for the minimizer of a unimodal function on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Fits the temperature minimizing validation NLL over `[0.05, 20]`.
///
/// With fewer than two distinct labels the problem is degenerate: a warning
/// is logged and `T = 1` returned.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<CalibrationResult> {
    validate(logits, labels)?;
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let nll_before = mean_nll(logits, labels, 1.0);
    let ece_before = ece_of_logits(logits, labels, 1.0)?;
    let (temperature, degenerate) = if distinct < 2 {
        warn!("temperature fit on a single class is degenerate; keeping T = 1");
        (1.0, true)
    } else {
        let t = golden_section(|t| mean_nll(logits, labels, t), T_MIN, T_MAX, T_TOL);
        // The bracket midpoint can be marginally worse than T = 1 on flat objectives.
        if mean_nll(logits, labels, t) <= nll_before {
            (t, false)
        } else {
            (1.0, false)
        }
    };
    Ok(CalibrationResult {
        temperature,
        nll_before,
        nll_after: mean_nll(logits, labels, temperature),
        ece_before,
        ece_after: ece_of_logits(logits, labels, temperature)?,
        bins: ECE_BINS,
        degenerate,
    })
}

fn ece_of_logits(logits: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<f64> {
    let probs = logits
        .iter()
        .map(|z| apply_temperature(z, temperature))
        .collect::<Result<Vec<_>>>()?;
    ece(&probs, labels, ECE_BINS)
}

/// Expected calibration error over `bins` equal-width confidence bins.
///
/// A prediction with confidence `c` falls in bin `min(floor(c·B), B-1)`.
pub fn ece(probs: &[ProbVector], labels: &[usize], bins: usize) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("ECE of zero predictions"));
    }
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    if probs.len() != labels.len() {
        return Err(Error::invalid("probabilities and labels differ in length"));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    for (p, &y) in probs.iter().zip(labels) {
        let c = p.max();
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if p.argmax() == y {
            hits[b] += 1;
        }
    }
    let n = probs.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hits[b] as f64 / nb - conf[b] / nb).abs()
        })
        .sum())
}
