//! Global and per-window z-score normalization.

use serde::{Deserialize, Serialize};

use crate::dataset::Window;
use crate::error::{Error, Result};

/// Default variance guard, added under the square root.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// A T×3 numeric array: a window after (or before) normalization.
///
/// Kept separate from [`Window`] so that raw samples survive normalization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Signal {
    rows: Vec<[f64; 3]>,
}

impl Signal {
    pub fn from_rows(rows: Vec<[f64; 3]>) -> Self {
        Signal { rows }
    }

    pub fn from_window(w: &Window) -> Self {
        Signal {
            rows: w.samples.iter().map(|s| s.to_array()).collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Signal {
            rows: vec![[0.0; 3]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<[f64; 3]> {
        self.rows
    }

    pub fn axis(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[k])
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Signal {
        Signal {
            rows: self.rows.iter().map(|&r| f(r)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Signal) -> f64 {
        assert_eq!(self.len(), other.len(), "signal length mismatch");
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-axis statistics fitted over a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub epsilon: f64,
    pub n: usize,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        values.fold(Moments::default(), |mut m, v| {
            m.count += 1.0;
            let delta = v - m.mean;
            m.mean += delta / m.count;
            m.m2 += delta * (v - m.mean);
            m
        })
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }

    fn population_variance(&self) -> f64 {
        self.m2 / self.count
    }
}

/// Fits global per-axis mean and `sqrt(population variance + ε)`.
///
/// Windows are reduced independently and merged pairwise, so the reduction
/// can be chunked without changing the result beyond rounding.
pub fn fit_global(windows: &[Window], epsilon: f64) -> Result<GlobalStats> {
    if windows.is_empty() {
        return Err(Error::invalid("cannot fit global statistics on zero windows"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be non-negative"));
    }
    let mut mu = [0.0; 3];
    let mut sigma = [0.0; 3];
    for k in 0..3 {
        let m = windows
            .iter()
            .map(|w| Moments::of(w.samples.iter().map(|s| s.to_array()[k])))
            .fold(Moments::default(), Moments::merge);
        mu[k] = m.mean;
        sigma[k] = (m.population_variance() + epsilon).sqrt();
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid(
            "zero variance with epsilon = 0 leaves sigma at zero",
        ));
    }
    Ok(GlobalStats {
        mu,
        sigma,
        epsilon,
        n: windows.len(),
    })
}

pub fn apply_global(signal: &Signal, stats: &GlobalStats) -> Signal {
    signal.map(|r| {
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (r[k] - stats.mu[k]) / stats.sigma[k];
        }
        out
    })
}

/// Per-axis mean and ε-guarded standard deviation of one window.
pub fn window_stats(signal: &Signal, epsilon: f64) -> ([f64; 3], [f64; 3]) {
    let mut mu = [0.0; 3];
    let mut sigma = [0.0; 3];
    let n = signal.len() as f64;
    for k in 0..3 {
        let mean = signal.axis(k).sum::<f64>() / n;
        let var = signal.axis(k).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        mu[k] = mean;
        sigma[k] = (var + epsilon).sqrt();
    }
    (mu, sigma)
}

/// Normalizes each axis by the window's own statistics.
pub fn apply_per_window(signal: &Signal, epsilon: f64) -> Signal {
    per_window_with_sigma(signal, epsilon).0
}

/// Per-window normalization that also returns the per-axis σ used, which
/// the augmentation step needs to convert g-unit jitter into z-units.
pub fn per_window_with_sigma(signal: &Signal, epsilon: f64) -> (Signal, [f64; 3]) {
    let (mu, sigma) = window_stats(signal, epsilon);
    let out = signal.map(|r| {
        let mut o = [0.0; 3];
        for k in 0..3 {
            o[k] = (r[k] - mu[k]) / sigma[k];
        }
        o
    });
    (out, sigma)
}

/// Normalization scheme attached to a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    PerWindow { epsilon: f64 },
    Global(GlobalStats),
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::PerWindow {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl Normalization {
    /// Normalized signal together with the per-axis σ that divided it.
    pub fn apply(&self, signal: &Signal) -> (Signal, [f64; 3]) {
        match self {
            Normalization::PerWindow { epsilon } => per_window_with_sigma(signal, *epsilon),
            Normalization::Global(stats) => (apply_global(signal, stats), stats.sigma),
        }
    }

    pub fn apply_window(&self, w: &Window) -> (Signal, [f64; 3]) {
        self.apply(&Signal::from_window(w))
    }
}

/// Which normalization to fit for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    PerWindow,
    Global,
}

impl NormMode {
    pub fn fit(self, train: &[Window], epsilon: f64) -> Result<Normalization> {
        Ok(match self {
            NormMode::PerWindow => Normalization::PerWindow { epsilon },
            NormMode::Global => Normalization::Global(fit_global(train, epsilon)?),
        })
    }
}
