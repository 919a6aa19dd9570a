//! Computations behind the browser panels, kept free of JS types so they can
//! be tested natively.

use patchtst_har::augment::{apply, draw_tagged, AugPolicy, AugTag};
use patchtst_har::calibrate::{apply_temperature, ece, fit_temperature, ECE_BINS};
use patchtst_har::dataset::{synth_sensors, Sensor, SynthConfig, Window, WINDOW_LEN};
use patchtst_har::ensemble::fuse_sensors;
use patchtst_har::model::ProbVector;
use patchtst_har::normalize::{apply_global, apply_per_window, fit_global, Signal, DEFAULT_EPSILON};
use patchtst_har::rng::substream;
use rand::Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

fn flat(signal: &Signal) -> Vec<f64> {
    signal.rows().iter().flatten().copied().collect()
}

fn unflat(samples: &[f64]) -> Result<Signal, String> {
    if samples.len() != 3 * WINDOW_LEN {
        return Err(format!("expected {} values, got {}", 3 * WINDOW_LEN, samples.len()));
    }
    Ok(Signal::from_rows(samples.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

fn windows(n_classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Vec<Window>, String> {
    synth_sensors(&SynthConfig::new(n_classes, per_class, noise, seed), &[(Sensor::LA, noise)]).map_err(|e| e.to_string())
}

/// One synthetic window of class `class`, row-major `[x0, y0, z0, x1, …]`.
pub fn demo_window(class: usize, noise: f64, seed: u64) -> Result<Vec<f64>, String> {
    let all = windows(class.max(1) + 1, 1, noise, seed)?;
    Ok(flat(&Signal::from_window(&all[class])))
}

#[derive(Serialize)]
pub struct Augmented {
    pub draw: String,
    pub samples: Vec<f64>,
}

/// Applies one transform of `policy` to a raw window.
pub fn augment(samples: &[f64], policy: &str, tag: &str, seed: u64) -> Result<Augmented, String> {
    let policy = AugPolicy::preset(policy).map_err(|e| e.to_string())?.with_seed(seed);
    let tag: AugTag = tag.parse().map_err(|e: patchtst_har::Error| e.to_string())?;
    let signal = unflat(samples)?;
    let mut rng = substream(seed, &[tag.index() as u64]);
    let draw = draw_tagged(&policy, tag, &mut rng);
    let out = apply(&signal, &draw, &mut rng);
    Ok(Augmented {
        draw: serde_json::to_string(&draw).map_err(|e| e.to_string())?,
        samples: flat(&out),
    })
}

#[derive(Serialize)]
pub struct NormView {
    pub raw: Vec<f64>,
    pub global: Vec<f64>,
    pub per_window: Vec<f64>,
    /// Per-window axis means of the shown window under each scheme.
    pub means: [[f64; 3]; 3],
}

/// Normalizes window `index` of a batch whose windows carry a random gravity
/// offset of up to `offset_g` per axis, as a change of sensor placement would.
pub fn normalize_compare(seed: u64, n_windows: usize, offset_g: f64, index: usize) -> Result<NormView, String> {
    if index >= n_windows {
        return Err(format!("index {index} out of range for {n_windows} windows"));
    }
    let mut batch = windows(4, n_windows.div_ceil(4), 0.05, seed)?;
    batch.truncate(n_windows);
    let mut rng = substream(seed, &[0xD0]);
    for w in &mut batch {
        let shift: [f64; 3] = [0; 3].map(|_| rng.gen_range(-offset_g..=offset_g));
        for s in &mut w.samples {
            s.x += shift[0];
            s.y += shift[1];
            s.z += shift[2];
        }
    }
    let stats = fit_global(&batch, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let raw = Signal::from_window(&batch[index]);
    let global = apply_global(&raw, &stats);
    let per_window = apply_per_window(&raw, DEFAULT_EPSILON);
    let mean = |s: &Signal| [0, 1, 2].map(|k| s.axis(k).sum::<f64>() / s.len() as f64);
    Ok(NormView {
        means: [mean(&raw), mean(&global), mean(&per_window)],
        raw: flat(&raw),
        global: flat(&global),
        per_window: flat(&per_window),
    })
}

#[derive(Serialize)]
pub struct Reliability {
    pub temperature: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    /// `[mean confidence, accuracy, count]` per bin, before and after scaling.
    pub bins_before: Vec<[f64; 3]>,
    pub bins_after: Vec<[f64; 3]>,
}

fn bin_stats(probs: &[ProbVector], labels: &[usize]) -> Vec<[f64; 3]> {
    let mut acc = vec![[0.0; 3]; ECE_BINS];
    for (p, &y) in probs.iter().zip(labels) {
        let c = p.max();
        let b = ((c * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        acc[b][0] += c;
        acc[b][1] += f64::from(u8::from(p.argmax() == y));
        acc[b][2] += 1.0;
    }
    acc.into_iter()
        .map(|[c, a, n]| if n > 0.0 { [c / n, a / n, n] } else { [0.0, 0.0, 0.0] })
        .collect()
}

/// Draws labels from `softmax(z / true_t)` for random logits `z`, so a model
/// reporting `z` is miscalibrated by exactly `true_t`, then fits T back.
pub fn calibration(seed: u64, true_t: f64, n: usize, n_classes: usize) -> Result<Reliability, String> {
    if !(true_t > 0.0) || n == 0 || n_classes < 2 {
        return Err("need a positive temperature, samples and at least two classes".into());
    }
    let mut rng = substream(seed, &[0xCA]);
    let spread = Normal::new(0.0, 3.0).map_err(|e| e.to_string())?;
    let gumbel = Gumbel::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..n_classes).map(|_| spread.sample(&mut rng)).collect();
        let y = z
            .iter()
            .map(|v| v / true_t + gumbel.sample(&mut rng))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
            .0;
        logits.push(z);
        labels.push(y);
    }
    let fit = fit_temperature(&logits, &labels).map_err(|e| e.to_string())?;
    let probs_at = |t: f64| -> Result<Vec<ProbVector>, String> {
        logits.iter().map(|z| apply_temperature(z, t).map_err(|e| e.to_string())).collect()
    };
    let before = probs_at(1.0)?;
    let after = probs_at(fit.temperature)?;
    debug_assert!((ece(&after, &labels, ECE_BINS).unwrap_or(0.0) - fit.ece_after).abs() < 1e-12);
    Ok(Reliability {
        temperature: fit.temperature,
        ece_before: fit.ece_before,
        ece_after: fit.ece_after,
        nll_before: fit.nll_before,
        nll_after: fit.nll_after,
        bins_before: bin_stats(&before, &labels),
        bins_after: bin_stats(&after, &labels),
    })
}

#[derive(Serialize)]
pub struct FusionView {
    pub per_sensor: Vec<Vec<f64>>,
    pub fused: Vec<f64>,
    pub label: usize,
}

/// Softmax at `temperature` of four rows of sensor logits, then the uniform
/// average over the sensors whose bit is set in `mask` (LA = bit 0 … RL = bit 3).
pub fn fusion(logits: &[f64], n_classes: usize, temperature: f64, mask: u8) -> Result<FusionView, String> {
    if n_classes == 0 || logits.len() != 4 * n_classes {
        return Err(format!("expected 4 x {n_classes} logits, got {}", logits.len()));
    }
    let mut per = BTreeMap::new();
    let mut per_sensor = Vec::with_capacity(4);
    for (s, z) in Sensor::ALL.into_iter().zip(logits.chunks(n_classes)) {
        let p = apply_temperature(z, temperature).map_err(|e| e.to_string())?;
        per_sensor.push(p.as_slice().to_vec());
        per.insert(s, p);
    }
    let active: BTreeSet<Sensor> = Sensor::ALL.into_iter().filter(|s| mask & (1 << s.index()) != 0).collect();
    if active.is_empty() {
        return Err("select at least one sensor".into());
    }
    let fused = fuse_sensors(&per, &active).map_err(|e| e.to_string())?;
    Ok(FusionView {
        per_sensor,
        label: fused.argmax(),
        fused: fused.as_slice().to_vec(),
    })
}
