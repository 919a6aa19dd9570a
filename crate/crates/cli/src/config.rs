//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::Path;

use patchtst_har::augment::AugPolicy;
use patchtst_har::model::ModelConfig;
use patchtst_har::normalize::NormMode;
use patchtst_har::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSpec {
    /// Number of subject-exclusive folds.
    pub k: usize,
    /// Validation fold; `None` trains on every subject.
    pub fold: Option<usize>,
    /// Hold out exactly this many subjects per fold instead of dealing all.
    pub per_fold: Option<usize>,
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec {
            k: 5,
            fold: Some(0),
            per_fold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives initialization, shuffling, fold assignment and the augmentation schedule.
    pub seed: u64,
    pub norm: NormMode,
    pub aug_preset: String,
    pub folds: FoldSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            norm: NormMode::PerWindow,
            aug_preset: "pool-v1".into(),
            folds: FoldSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn policy(&self) -> Result<AugPolicy, CliError> {
        AugPolicy::preset(&self.aug_preset)
            .map(|p| p.with_seed(self.seed))
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: patchtst_har::Error| CliError::Usage(e.to_string());
        self.model.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.policy()?.validate().map_err(usage)?;
        if let Some(f) = self.folds.fold {
            if f >= self.folds.k {
                return Err(CliError::Usage(format!("fold {f} out of range for k = {}", self.folds.k)));
            }
        }
        Ok(())
    }

    /// The effective training recipe, with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 7\nnorm = \"global\"\n[model]\nd_model = 32\nn_heads = 4\n[train]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.norm, NormMode::Global);
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.n_layers, 4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr, 3e-4);
        assert_eq!(cfg.train_config().seed, 7);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
    }

    #[test]
    fn bad_preset_is_a_usage_error() {
        let cfg = RunConfig {
            aug_preset: "pool-v9".into(),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
    }
}
