use serde::{Deserialize, Serialize};

use crate::dataset::{NUM_CLASSES, WINDOW_LEN};
use crate::error::{Error, Result};

/// How token representations are reduced before the classification head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over the P tokens; the head sees `d` features.
    #[default]
    Mean,
    /// Concatenate tokens; the head sees `P·d` features.
    Flatten,
}

/// Architecture hyperparameters of one sensor encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_len: usize,
    pub n_patches: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub n_classes: usize,
    /// Dropout on attention and FFN sub-layer outputs (train mode only).
    pub dropout: f64,
    /// Probability of skipping a residual branch (train mode only).
    pub drop_path: f64,
    pub pooling: Pooling,
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl Default for ModelConfig {
    /// L=5, P=10, d=128, N=4, h=8, FFN 2d, C=19.
    fn default() -> Self {
        ModelConfig {
            patch_len: 5,
            n_patches: 10,
            d_model: 128,
            n_layers: 4,
            n_heads: 8,
            ffn_hidden: 256,
            n_classes: NUM_CLASSES,
            dropout: 0.1,
            drop_path: 0.05,
            pooling: Pooling::Mean,
            ln_eps: default_ln_eps(),
        }
    }
}

impl ModelConfig {
    /// A desk-scale encoder over full 50-sample windows.
    pub fn tiny(n_classes: usize) -> Self {
        ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            ffn_hidden: 32,
            n_classes,
            ..Self::default()
        }
    }

    /// Builds a config with `ffn_hidden = 2·d` and training regularizers off.
    pub fn plain(
        patch_len: usize,
        n_patches: usize,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        n_classes: usize,
    ) -> Self {
        ModelConfig {
            patch_len,
            n_patches,
            d_model,
            n_layers,
            n_heads,
            ffn_hidden: 2 * d_model,
            n_classes,
            dropout: 0.0,
            drop_path: 0.0,
            pooling: Pooling::Mean,
            ln_eps: default_ln_eps(),
        }
    }

    /// Samples per input window, `L·P`.
    pub fn window_len(&self) -> usize {
        self.patch_len * self.n_patches
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_len
    }

    pub fn head_in(&self) -> usize {
        match self.pooling {
            Pooling::Mean => self.d_model,
            Pooling::Flatten => self.n_patches * self.d_model,
        }
    }

    /// True when the config matches the fixed 50-sample window format.
    pub fn fits_window(&self) -> bool {
        self.window_len() == WINDOW_LEN
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("patch_len", self.patch_len),
            ("n_patches", self.n_patches),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        for (name, p) in [("dropout", self.dropout), ("drop_path", self.drop_path)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::invalid("ln_eps must be positive"));
        }
        Ok(())
    }
}

/// Number of learnable scalars for `cfg` (the fixed position table excluded).
pub fn param_count(cfg: &ModelConfig) -> usize {
    super::params::shapes(cfg).iter().map(|s| s.len()).sum()
}
