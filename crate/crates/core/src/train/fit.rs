use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_normalized, noise_stream, AugDraw, AugPolicy};
use crate::dataset::{class_counts, Window};
use crate::ensemble::metrics::macro_f1;
use crate::error::{Error, Result};
use crate::model::{argmax, forward, sample_drop_path, ModelConfig, ModelParams, Real, WindowNoise};
use crate::normalize::{NormMode, Normalization, Signal, DEFAULT_EPSILON};
use crate::parallel::map_chunks;
use crate::rng::{substream, tag};

use super::grad::{batch_gradients, Example};
use super::loss::{class_weights, ClassWeights};
use super::optim::{clip_gradients, cosine_lr, AdamW};
use super::{StreamKind, TrainConfig};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: Option<f64>,
    /// Batches per augmentation tag (jitter, scale, rotate, dropout).
    pub aug_counts: [usize; 4],
}

/// The augmentation applied to one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchDraw {
    pub epoch: usize,
    pub batch: u64,
    pub windows: usize,
    pub draw: AugDraw,
}

#[derive(Clone, Debug)]
pub struct BestParams<F> {
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub params: ModelParams<F>,
}

#[derive(Clone, Debug)]
pub struct TrainReport<F> {
    /// Parameters after the final epoch.
    pub params: ModelParams<F>,
    /// Parameters of the epoch with the highest validation macro-F1.
    pub best: Option<BestParams<F>>,
    pub history: Vec<EpochMetrics>,
    pub draws: Vec<BatchDraw>,
    pub normalization: Normalization,
    pub class_weights: ClassWeights,
}

struct Prepared {
    input: Signal,
    sigma: [f64; 3],
    target: usize,
}

fn prepare(windows: &[Window], cfg: &ModelConfig, norm: &Normalization, what: &str) -> Result<Vec<Prepared>> {
    windows
        .iter()
        .map(|w| {
            let target = w
                .label
                .ok_or_else(|| Error::invalid(format!("{what} window '{}' has no label", w.id)))?;
            if target >= cfg.n_classes {
                return Err(Error::invalid(format!(
                    "{what} window '{}' has label {target} but the model has {} classes",
                    w.id, cfg.n_classes
                )));
            }
            if w.samples.len() != cfg.window_len() {
                return Err(Error::invalid(format!(
                    "{what} window '{}' has {} samples, model expects {}",
                    w.id,
                    w.samples.len(),
                    cfg.window_len()
                )));
            }
            let (input, sigma) = norm.apply_window(w);
            Ok(Prepared { input, sigma, target })
        })
        .collect()
}

/// Eval-mode logits for a set of already-normalized inputs.
pub fn predict_logits<F: Real>(params: &ModelParams<F>, cfg: &ModelConfig, inputs: &[Signal]) -> Result<Vec<Vec<f64>>> {
    let parts = map_chunks(inputs, 16, |_, chunk| {
        chunk
            .iter()
            .map(|s| forward(params, cfg, s).map(|z| z.iter().map(|v| v.as_f64()).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()
    });
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn batch_noise<F: Real>(cfg: &ModelConfig, seed: u64, stream: StreamKind, batch: u64, n: usize) -> Option<Vec<WindowNoise<F>>> {
    if cfg.dropout == 0.0 && cfg.drop_path == 0.0 {
        return None;
    }
    let keeps = sample_drop_path(cfg, &mut substream(seed, &[tag::DROP_PATH, stream.key(), batch]));
    Some(
        (0..n)
            .map(|i| {
                let mut rng = substream(seed, &[tag::DROPOUT, stream.key(), batch, i as u64]);
                WindowNoise::sample(cfg, &keeps, &mut rng)
            })
            .collect(),
    )
}

/// Trains one encoder on `train` and tracks macro-F1 on `val`.
///
/// Each epoch shuffles with a seeded generator, steps the cosine schedule
/// and runs AdamW with clipping. The robust stream applies one
/// [`AugDraw`] per batch after normalization; the clean stream applies none.
pub fn train_fold<F: Real>(
    train: &[Window],
    val: &[Window],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    policy: &AugPolicy,
    stream: StreamKind,
    norm_mode: NormMode,
) -> Result<TrainReport<F>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    policy.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let held: std::collections::BTreeSet<&str> = val.iter().map(|w| w.subject.as_str()).collect();
    if let Some(w) = train.iter().find(|w| held.contains(w.subject.as_str())) {
        return Err(Error::invalid(format!(
            "subject '{}' appears in both training and validation",
            w.subject
        )));
    }
    let normalization = norm_mode.fit(train, DEFAULT_EPSILON)?;
    let data = prepare(train, model_cfg, &normalization, "training")?;
    let val_data = prepare(val, model_cfg, &normalization, "validation")?;
    let val_inputs: Vec<Signal> = val_data.iter().map(|p| p.input.clone()).collect();
    let val_truth: Vec<usize> = val_data.iter().map(|p| p.target).collect();

    let weights = if train_cfg.class_weighting {
        class_weights(&class_counts(train, model_cfg.n_classes))?
    } else {
        ClassWeights::uniform(model_cfg.n_classes)
    };

    let mut params = ModelParams::<F>::init(model_cfg, train_cfg.seed);
    let mut opt = AdamW::new(model_cfg);
    let n_batches = data.len().div_ceil(train_cfg.batch_size);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut draws = Vec::new();
    let mut best: Option<BestParams<F>> = None;

    for epoch in 0..train_cfg.epochs {
        let lr = cosine_lr(epoch, train_cfg);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut substream(train_cfg.seed, &[tag::SHUFFLE, stream.key(), epoch as u64]));
        let mut loss_sum = 0.0;
        let mut aug_counts = [0usize; 4];
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch_index = (epoch * n_batches + b) as u64;
            let draw = match stream {
                StreamKind::Robust => Some(policy.draw(batch_index)),
                StreamKind::Clean => None,
            };
            let examples: Vec<Example> = idx
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    let p = &data[j];
                    let input = match &draw {
                        Some(d) => {
                            let mut rng = noise_stream(policy.seed, batch_index, i as u64);
                            apply_normalized(&p.input, d, &mut rng, p.sigma)
                        }
                        None => p.input.clone(),
                    };
                    Example { input, target: p.target }
                })
                .collect();
            if let Some(d) = draw {
                aug_counts[d.tag().index()] += 1;
                draws.push(BatchDraw {
                    epoch,
                    batch: batch_index,
                    windows: examples.len(),
                    draw: d,
                });
            }
            let noise = batch_noise::<F>(model_cfg, train_cfg.seed, stream, batch_index, examples.len());
            let mut bg = batch_gradients(
                &params,
                model_cfg,
                &examples,
                &weights,
                train_cfg.label_smoothing,
                noise.as_deref(),
            )
            .map_err(|e| match e {
                Error::NumericFailure { site } => {
                    Error::numeric(format!("{site} (epoch {epoch}, batch {b})"))
                }
                other => other,
            })?;
            if !bg.loss.is_finite() {
                return Err(Error::numeric(format!("training loss (epoch {epoch}, batch {b})")));
            }
            loss_sum += bg.loss * examples.len() as f64;
            clip_gradients(&mut bg.grads, train_cfg.clip_norm);
            opt.step(&mut params, &bg.grads, lr, train_cfg);
            debug!("epoch {epoch} batch {b} loss {:.5}", bg.loss);
        }
        let train_loss = loss_sum / data.len() as f64;
        let val_macro_f1 = if val_inputs.is_empty() {
            None
        } else {
            let pred: Vec<usize> = predict_logits(&params, model_cfg, &val_inputs)?
                .iter()
                .map(|z| argmax(z))
                .collect();
            Some(macro_f1(&pred, &val_truth, model_cfg.n_classes)?)
        };
        if let Some(f1) = val_macro_f1 {
            if best.as_ref().is_none_or(|b| f1 > b.val_macro_f1) {
                best = Some(BestParams {
                    epoch,
                    val_macro_f1: f1,
                    params: params.clone(),
                });
            }
        }
        info!(
            "[{stream}] epoch {epoch} lr {lr:.3e} loss {train_loss:.5} val macro-F1 {}",
            val_macro_f1.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            val_macro_f1,
            aug_counts,
        });
    }
    Ok(TrainReport {
        params,
        best,
        history,
        draws,
        normalization,
        class_weights: weights,
    })
}

/// Writes `epoch,lr,train_loss,val_macro_f1,aug_tag_histogram`.
pub fn write_metrics_csv(history: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,val_macro_f1,aug_tag_histogram\n");
    for m in history {
        let hist = crate::augment::AugTag::ALL
            .iter()
            .map(|t| format!("{}:{}", t, m.aug_counts[t.index()]))
            .collect::<Vec<_>>()
            .join(";");
        let val = m.val_macro_f1.map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{},{:e},{:.6},{},{}", m.epoch, m.lr, m.train_loss, val, hist);
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}
