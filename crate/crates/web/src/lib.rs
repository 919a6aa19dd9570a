//! WebAssembly bindings for the demo page in `www/`.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demo;

use wasm_bindgen::prelude::*;

fn json<T: serde::Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Synthetic window, row-major x, y, z.
#[wasm_bindgen(js_name = demoWindow)]
pub fn demo_window(class: usize, noise: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    demo::demo_window(class, noise, seed).map_err(|e| JsError::new(&e))
}

/// JSON `{draw, samples}` for one transform of a preset.
#[wasm_bindgen]
pub fn augment(samples: &[f64], policy: &str, tag: &str, seed: u64) -> Result<String, JsError> {
    json(demo::augment(samples, policy, tag, seed))
}

/// JSON `{raw, global, per_window, means}`.
#[wasm_bindgen(js_name = normalizeCompare)]
pub fn normalize_compare(seed: u64, n_windows: usize, offset_g: f64, index: usize) -> Result<String, JsError> {
    json(demo::normalize_compare(seed, n_windows, offset_g, index))
}

/// JSON reliability summary of a temperature fit.
#[wasm_bindgen]
pub fn calibration(seed: u64, true_t: f64, n: usize, n_classes: usize) -> Result<String, JsError> {
    json(demo::calibration(seed, true_t, n, n_classes))
}

/// JSON `{per_sensor, fused, label}`.
#[wasm_bindgen]
pub fn fusion(logits: &[f64], n_classes: usize, temperature: f64, mask: u8) -> Result<String, JsError> {
    json(demo::fusion(logits, n_classes, temperature, mask))
}
