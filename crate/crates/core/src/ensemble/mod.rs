//! Probability-level fusion across training streams and sensors, plus the
//! evaluation helpers built on it.

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint::TrainedModel;
use crate::dataset::{Sensor, Window};
use crate::error::{Error, Result};
use crate::model::{ProbVector, Real, SIMPLEX_TOL};
use crate::parallel::map_chunks;
use crate::train::StreamKind;

pub use metrics::{
    accuracy, confusion, confusion_with, macro_f1, macro_f1_with, Averaging, EvalReport,
};

/// One model's calibrated output for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorPrediction {
    pub id: String,
    pub sensor: Sensor,
    pub stream: StreamKind,
    pub probs: ProbVector,
}

fn check_simplex(p: &ProbVector) -> Result<()> {
    let sum: f64 = p.as_slice().iter().sum();
    if p.as_slice().iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid("input is not a probability vector"));
    }
    Ok(())
}

/// Uniform convex combination of probability vectors of equal length.
pub fn mean_probs(vectors: &[&ProbVector]) -> Result<ProbVector> {
    let first = vectors.first().ok_or_else(|| Error::invalid("nothing to fuse"))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for v in vectors {
        check_simplex(v)?;
        if v.len() != n {
            return Err(Error::invalid("probability vectors differ in length"));
        }
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    Ok(ProbVector::from_raw(acc.into_iter().map(|a| a * inv).collect()))
}

/// `½(clean + robust)`.
pub fn fuse_streams(clean: &ProbVector, robust: &ProbVector) -> Result<ProbVector> {
    mean_probs(&[clean, robust])
}

/// Uniform mean over the active sensors (`1/|active|` weights).
pub fn fuse_sensors(per_sensor: &BTreeMap<Sensor, ProbVector>, active: &BTreeSet<Sensor>) -> Result<ProbVector> {
    if active.is_empty() {
        return Err(Error::invalid("no active sensors"));
    }
    let vectors = active
        .iter()
        .map(|s| {
            per_sensor
                .get(s)
                .ok_or_else(|| Error::invalid(format!("no probabilities for active sensor {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_probs(&vectors)
}

/// Trained models keyed by sensor and stream.
#[derive(Clone, Debug, Default)]
pub struct ModelBank<F> {
    models: BTreeMap<(Sensor, StreamKind), TrainedModel<F>>,
}

impl<F: Real> ModelBank<F> {
    pub fn new() -> Self {
        ModelBank {
            models: BTreeMap::new(),
        }
    }

    /// Adds a model, replacing any earlier one for the same sensor and stream.
    pub fn insert(&mut self, model: TrainedModel<F>) {
        self.models.insert((model.sensor, model.stream), model);
    }

    pub fn get(&self, sensor: Sensor, stream: StreamKind) -> Option<&TrainedModel<F>> {
        self.models.get(&(sensor, stream))
    }

    pub fn sensors(&self) -> BTreeSet<Sensor> {
        self.models.keys().map(|&(s, _)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Copy restricted to the given streams.
    pub fn only(&self, streams: &[StreamKind]) -> Self {
        ModelBank {
            models: self
                .models
                .iter()
                .filter(|((_, st), _)| streams.contains(st))
                .map(|(k, m)| (*k, m.clone()))
                .collect(),
        }
    }

    fn streams_of(&self, sensor: Sensor) -> Vec<&TrainedModel<F>> {
        StreamKind::ALL
            .iter()
            .filter_map(|&st| self.get(sensor, st))
            .collect()
    }

    /// Per-window sensor probability: the two streams averaged when both exist.
    pub fn sensor_probs(&self, window: &Window) -> Result<ProbVector> {
        let models = self.streams_of(window.sensor);
        match models.as_slice() {
            [] => Err(Error::Routing {
                ids: vec![window.id.clone()],
            }),
            [single] => single.probs(window),
            [clean, robust] => fuse_streams(&clean.probs(window)?, &robust.probs(window)?),
            _ => unreachable!("at most two streams per sensor"),
        }
    }
}

/// Fused prediction for one window id.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub probs: ProbVector,
    pub sensors: Vec<Sensor>,
}

/// Fused labels for every window id seen on an active sensor.
///
/// Each window is run through its sensor's models (eval mode, temperature,
/// stream average); windows sharing an id are fused across the active
/// sensors present for that id; the label is the argmax with ties going to
/// the lowest class. Output follows first-seen id order.
pub fn predict_labels<F: Real>(
    windows: &[Window],
    bank: &ModelBank<F>,
    active: &BTreeSet<Sensor>,
) -> Result<Vec<Prediction>> {
    if active.is_empty() {
        return Err(Error::invalid("no active sensors"));
    }
    let routed: Vec<&Window> = windows.iter().filter(|w| active.contains(&w.sensor)).collect();
    let available = bank.sensors();
    let missing: Vec<String> = routed
        .iter()
        .filter(|w| !available.contains(&w.sensor))
        .map(|w| format!("{} ({})", w.id, w.sensor))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Routing { ids: missing });
    }
    let parts = map_chunks(&routed, 16, |_, chunk| {
        chunk
            .iter()
            .map(|w| bank.sensor_probs(w))
            .collect::<Result<Vec<_>>>()
    });
    let mut probs = Vec::with_capacity(routed.len());
    for p in parts {
        probs.extend(p?);
    }

    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, BTreeMap<Sensor, ProbVector>> = HashMap::new();
    for (w, p) in routed.iter().zip(probs) {
        let group = groups.entry(w.id.as_str()).or_insert_with(|| {
            order.push(w.id.as_str());
            BTreeMap::new()
        });
        if group.insert(w.sensor, p).is_some() {
            return Err(Error::invalid(format!(
                "window id '{}' appears twice for sensor {}",
                w.id, w.sensor
            )));
        }
    }
    order
        .into_iter()
        .map(|id| {
            let per_sensor = &groups[id];
            let present: BTreeSet<Sensor> = per_sensor.keys().copied().collect();
            let fused = fuse_sensors(per_sensor, &present)?;
            Ok(Prediction {
                id: id.to_string(),
                label: fused.argmax(),
                probs: fused,
                sensors: present.into_iter().collect(),
            })
        })
        .collect()
}

/// Ground-truth label per window id (first labelled occurrence wins).
pub fn truth_by_id(windows: &[Window]) -> HashMap<String, usize> {
    let mut truth = HashMap::new();
    for w in windows {
        if let Some(l) = w.label {
            truth.entry(w.id.clone()).or_insert(l);
        }
    }
    truth
}

/// Aligns predictions with ground truth, failing on unlabelled ids.
pub fn align_labels(preds: &[Prediction], truth: &HashMap<String, usize>) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut p = Vec::with_capacity(preds.len());
    let mut t = Vec::with_capacity(preds.len());
    for pr in preds {
        let label = truth
            .get(&pr.id)
            .ok_or_else(|| Error::invalid(format!("no ground truth for window '{}'", pr.id)))?;
        p.push(pr.label);
        t.push(*label);
    }
    Ok((p, t))
}

/// Macro-F1 of the fused predictions against the windows' labels.
pub fn evaluate<F: Real>(windows: &[Window], bank: &ModelBank<F>, active: &BTreeSet<Sensor>, n_classes: usize) -> Result<f64> {
    let preds = predict_labels(windows, bank, active)?;
    let (p, t) = align_labels(&preds, &truth_by_id(windows))?;
    macro_f1(&p, &t, n_classes)
}

/// One row of the leave-one-sensor-out table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutRow {
    /// `None` for the full ensemble.
    pub dropped: Option<Sensor>,
    pub macro_f1: f64,
    /// Change versus the full ensemble, percentage points.
    pub delta_pp: f64,
}

/// Full four-sensor ensemble followed by each three-sensor subset.
pub fn sensor_dropout_sweep<F: Real>(windows: &[Window], bank: &ModelBank<F>, n_classes: usize) -> Result<Vec<DropoutRow>> {
    let all: BTreeSet<Sensor> = Sensor::ALL.into_iter().collect();
    let missing: Vec<String> = all
        .difference(&bank.sensors())
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("no models for sensor(s): {}", missing.join(", "))));
    }
    let full = evaluate(windows, bank, &all, n_classes)?;
    let mut rows = vec![DropoutRow {
        dropped: None,
        macro_f1: full,
        delta_pp: 0.0,
    }];
    for s in Sensor::ALL {
        let mut active = all.clone();
        active.remove(&s);
        let f1 = evaluate(windows, bank, &active, n_classes)?;
        rows.push(DropoutRow {
            dropped: Some(s),
            macro_f1: f1,
            delta_pp: (f1 - full) * 100.0,
        });
    }
    Ok(rows)
}

pub const DROPOUT_CSV_HEADER: &str = "dropped_sensor,active_sensors,macro_f1,delta_pp";

/// CSV with macro-F1 to 4 decimals and Δ in percentage points to 2 decimals.
pub fn dropout_csv(rows: &[DropoutRow]) -> String {
    let mut out = format!("{DROPOUT_CSV_HEADER}\n");
    for r in rows {
        let active: Vec<&str> = Sensor::ALL
            .iter()
            .filter(|&&s| Some(s) != r.dropped)
            .map(|s| s.as_str())
            .collect();
        let dropped = r.dropped.map_or("none", Sensor::as_str);
        let _ = writeln!(out, "{dropped},{},{:.4},{:.2}", active.join(";"), r.macro_f1, r.delta_pp);
    }
    out
}

/// Submission CSV with header `id,label`.
pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut out = String::from("id,label\n");
    for p in preds {
        let _ = writeln!(out, "{},{}", p.id, p.label);
    }
    out
}
