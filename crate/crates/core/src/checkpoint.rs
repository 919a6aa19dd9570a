//! Versioned JSON container for one trained sensor encoder.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_temperature, CalibrationResult};
use crate::dataset::{Sensor, Window};
use crate::error::{Error, Result};
use crate::model::{forward, shapes, ModelConfig, ModelParams, ProbVector, Real};
use crate::normalize::Normalization;
use crate::train::{StreamKind, TrainConfig};

pub const CHECKPOINT_SCHEMA: &str = "patchtst-har/checkpoint/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub sensor: Sensor,
    pub stream: StreamKind,
    pub model: ModelConfig,
    pub normalization: Normalization,
    /// Augmentation preset used by the robust stream.
    #[serde(default)]
    pub aug_preset: Option<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub calibration: Option<CalibrationResult>,
    /// Validation subjects of the fold this model was trained on.
    #[serde(default)]
    pub held_out_subjects: Vec<String>,
    /// Epoch the parameters were taken from.
    #[serde(default)]
    pub epoch: Option<usize>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<F: Real>(
        sensor: Sensor,
        stream: StreamKind,
        model: &ModelConfig,
        params: &ModelParams<F>,
        normalization: Normalization,
    ) -> Self {
        let tensors = shapes(model)
            .into_iter()
            .zip(params.tensors())
            .map(|(s, t)| NamedTensor {
                name: s.name,
                dims: s.dims,
                data: t.iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            sensor,
            stream,
            model: model.clone(),
            normalization,
            aug_preset: None,
            train: None,
            calibration: None,
            held_out_subjects: Vec::new(),
            epoch: None,
            tensors,
        }
    }

    /// Rebuilds the parameter set, checking every tensor name and shape.
    pub fn params<F: Real>(&self) -> Result<ModelParams<F>> {
        self.model.validate()?;
        let expected = shapes(&self.model);
        if expected.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, config needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        let mut params = ModelParams::<F>::zeros(&self.model);
        for ((shape, stored), slot) in expected.iter().zip(&self.tensors).zip(params.tensors_mut()) {
            if shape.name != stored.name || shape.dims != stored.dims || stored.data.len() != slot.len() {
                return Err(Error::invalid(format!(
                    "checkpoint tensor '{}' {:?} does not match expected '{}' {:?}",
                    stored.name, stored.dims, shape.name, shape.dims
                )));
            }
            for (dst, &src) in slot.iter_mut().zip(&stored.data) {
                *dst = F::lit(src);
            }
        }
        if let Some(name) = params.first_non_finite(&self.model) {
            return Err(Error::numeric(format!("checkpoint tensor {name}")));
        }
        Ok(params)
    }

    pub fn temperature(&self) -> f64 {
        self.calibration.as_ref().map_or(1.0, |c| c.temperature)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint schema '{}'",
                path.display(),
                ck.schema
            )));
        }
        Ok(ck)
    }

    pub fn trained_model<F: Real>(&self) -> Result<TrainedModel<F>> {
        Ok(TrainedModel {
            sensor: self.sensor,
            stream: self.stream,
            cfg: self.model.clone(),
            params: self.params()?,
            normalization: self.normalization.clone(),
            temperature: self.temperature(),
        })
    }
}

/// A ready-to-run encoder: parameters, input normalization and temperature.
#[derive(Clone, Debug)]
pub struct TrainedModel<F> {
    pub sensor: Sensor,
    pub stream: StreamKind,
    pub cfg: ModelConfig,
    pub params: ModelParams<F>,
    pub normalization: Normalization,
    pub temperature: f64,
}

impl<F: Real> TrainedModel<F> {
    /// Eval-mode logits of a raw window.
    pub fn logits(&self, window: &Window) -> Result<Vec<f64>> {
        let (signal, _) = self.normalization.apply_window(window);
        let z = forward(&self.params, &self.cfg, &signal)?;
        Ok(z.iter().map(|v| v.as_f64()).collect())
    }

    /// Temperature-scaled class probabilities.
    pub fn probs(&self, window: &Window) -> Result<ProbVector> {
        apply_temperature(&self.logits(window)?, self.temperature)
    }
}
