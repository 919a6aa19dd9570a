//! Batch loss and exact reverse-mode gradients.

use crate::error::{Error, Result};
use crate::model::{backward_window, forward_window, Mode, ModelConfig, ModelParams, Real, WindowNoise};
use crate::normalize::Signal;
use crate::parallel::map_chunks;

use super::loss::{smoothed_ce_loss, ClassWeights};

/// A normalized (and possibly augmented) input with its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Signal,
    pub target: usize,
}

/// Loss of one example and its gradients, accumulated into `grads`.
/// Returns `(loss, ∂loss/∂input)`.
pub fn example_gradients<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    example: &Example,
    weight: f64,
    smoothing: f64,
    mode: Mode<'_, F>,
    grads: &mut ModelParams<F>,
) -> Result<(F, Signal)> {
    let (logits, cache) = forward_window(params, cfg, &example.input, mode)?;
    let (loss, dlogits) = smoothed_ce_loss(&logits, example.target, smoothing, weight)?;
    let dinput = backward_window(params, cfg, &cache, &dlogits, grads);
    Ok((loss, dinput))
}

/// Mean batch loss and gradients.
#[derive(Clone, Debug)]
pub struct BatchGradients<F> {
    pub loss: f64,
    pub grads: ModelParams<F>,
}

const CHUNK: usize = 8;

/// Gradients of the mean weighted loss over `batch`.
///
/// `noise`, when given, pins dropout and stochastic-depth decisions per
/// window (train mode); `None` runs in eval mode.
pub fn batch_gradients<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    batch: &[Example],
    weights: &ClassWeights,
    smoothing: f64,
    noise: Option<&[WindowNoise<F>]>,
) -> Result<BatchGradients<F>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(n) = noise {
        if n.len() != batch.len() {
            return Err(Error::invalid("one noise record per window required"));
        }
    }
    let partials = map_chunks(batch, CHUNK, |start, chunk| -> Result<(f64, ModelParams<F>)> {
        let mut grads = ModelParams::zeros(cfg);
        let mut loss = 0.0;
        for (i, ex) in chunk.iter().enumerate() {
            let mode = match noise {
                Some(n) => Mode::Train(&n[start + i]),
                None => Mode::Eval,
            };
            let w = weights.get(ex.target);
            let (l, _) = example_gradients(params, cfg, ex, w, smoothing, mode, &mut grads)?;
            loss += l.as_f64();
        }
        Ok((loss, grads))
    });
    let mut total = ModelParams::zeros(cfg);
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(F::lit(inv));
    if let Some(name) = total.first_non_finite(cfg) {
        return Err(Error::numeric(format!("gradient of {name}")));
    }
    Ok(BatchGradients {
        loss: loss * inv,
        grads: total,
    })
}
