//! Patch-tokenized transformer encoder for one sensor.
//!
//! A window is cut into `P` patches of `L` samples, each projected to a
//! `d`-dimensional token and offset by a fixed sinusoidal position. `N`
//! pre-norm layers (`x' = x + A(LN(x))`, `x = x' + F(LN(x'))`) follow, then a
//! final LayerNorm, mean pooling over tokens and a linear head.

mod config;
mod forward;
mod ops;
mod params;
mod real;

pub use config::{param_count, ModelConfig, Pooling};
pub use forward::{
    attention, backward_window, embed, forward, forward_window, patchify, sample_drop_path,
    unpatchify, ForwardCache, LayerNoise, Mode, WindowNoise,
};
pub use ops::{gelu, layer_norm, linear, NormCache};
pub use params::{
    shapes, sinusoidal_positions, EncoderLayer, LayerNorm, Linear, ModelParams, ParamKind,
    TensorShape,
};
pub use real::Real;

use crate::error::{Error, Result};

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

/// Simplex tolerance for sums.
pub const SIMPLEX_TOL: f64 = 1e-6;

impl ProbVector {
    /// Validates non-negativity and unit sum within [`SIMPLEX_TOL`].
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("probability entries must be finite and non-negative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(p))
    }

    pub fn one_hot(n: usize, c: usize) -> Self {
        let mut p = vec![0.0; n];
        p[c] = 1.0;
        ProbVector(p)
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn from_raw(p: Vec<f64>) -> Self {
        ProbVector(p)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of real-valued logits.
pub fn softmax<F: Real>(logits: &[F]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of empty logits"));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric("softmax input contains NaN"));
    }
    let vals: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numeric("softmax input is not finite"));
    }
    let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / sum).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.25f64; 19]).unwrap();
        assert!(u.as_slice().iter().all(|&p| (p - 1.0 / 19.0).abs() < 1e-15));

        let base = [0.1f64, -2.0, 3.5, 0.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.0).collect();
        let (a, b) = (softmax(&base).unwrap(), softmax(&shifted).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }

        let mut big = [0.0f64; 19];
        big[4] = 1000.0;
        assert!(softmax(&big).unwrap().as_slice()[4] > 1.0 - 1e-9);
        assert!(matches!(softmax(&[f64::NAN, 0.0]), Err(Error::NumericFailure { .. })));
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.6, 0.5]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert_eq!(ProbVector::new(vec![0.4, 0.4, 0.2]).unwrap().argmax(), 0);
    }

    #[test]
    fn param_count_blocks() {
        // head alone, d=128, C=19
        assert_eq!(128 * 19 + 19, 2451);
        let cfg = ModelConfig::default();
        let s = shapes(&cfg);
        let head: usize = s.iter().filter(|t| t.name.starts_with("head")).map(|t| t.len()).sum();
        let proj: usize = s.iter().filter(|t| t.name.starts_with("projection")).map(|t| t.len()).sum();
        assert_eq!(head, 2451);
        assert_eq!(proj, 2048);
        assert_eq!(param_count(&cfg), 534_675);
    }
}
