//! Training: loss, gradients, optimizer and the epoch loop.

mod fit;
mod grad;
mod loss;
mod optim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fit::{predict_logits, train_fold, write_metrics_csv, BatchDraw, BestParams, EpochMetrics, TrainReport};
pub use grad::{batch_gradients, example_gradients, BatchGradients, Example};
pub use loss::{class_weights, smoothed_ce_loss, ClassWeights};
pub use optim::{clip_gradients, cosine_lr, global_norm, AdamW};

/// Which corpus a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    /// Un-augmented windows.
    Clean,
    /// One augmentation draw per batch.
    Robust,
}

impl StreamKind {
    pub const ALL: [StreamKind; 2] = [StreamKind::Clean, StreamKind::Robust];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Clean => "clean",
            StreamKind::Robust => "robust",
        }
    }

    pub(crate) fn key(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clean" => Ok(StreamKind::Clean),
            "robust" => Ok(StreamKind::Robust),
            other => Err(Error::invalid(format!("unknown stream '{other}', expected clean or robust"))),
        }
    }
}

/// Optimizer and regularization recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Inverse-sqrt class weighting; uniform weights when off.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            lr_min: 1e-6,
            epochs: 50,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            label_smoothing: 0.10,
            clip_norm: 1.0,
            batch_size: 512,
            class_weighting: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr_min > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label smoothing must lie in [0, 1)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip threshold must be positive"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("weight decay must be >= 0 and Adam epsilon > 0"));
        }
        Ok(())
    }
}
