//! Encoder forward pass with activation caching, and its exact reverse pass.

use rand::Rng;

use super::config::{ModelConfig, Pooling};
use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place,
    NormCache,
};
use super::params::{EncoderLayer, Linear, ModelParams};
use super::real::Real;
use crate::error::{Error, Result};
use crate::normalize::Signal;

/// Splits a `L·P × 3` signal into `P` rows of `3L` values.
///
/// Each row is axis-major: `[x_0..x_{L-1}, y_0..y_{L-1}, z_0..z_{L-1}]`.
pub fn patchify<F: Real>(signal: &Signal, cfg: &ModelConfig) -> Result<Vec<F>> {
    if signal.len() != cfg.window_len() {
        return Err(Error::invalid(format!(
            "signal has {} samples but patching expects L·P = {}",
            signal.len(),
            cfg.window_len()
        )));
    }
    let l = cfg.patch_len;
    let mut out = vec![F::zero(); cfg.n_patches * 3 * l];
    for (t, row) in signal.rows().iter().enumerate() {
        let (p, i) = (t / l, t % l);
        for k in 0..3 {
            out[p * 3 * l + k * l + i] = F::lit(row[k]);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Real>(patches: &[F], cfg: &ModelConfig) -> Signal {
    let l = cfg.patch_len;
    let rows = (0..cfg.window_len())
        .map(|t| {
            let (p, i) = (t / l, t % l);
            [0, 1, 2].map(|k| patches[p * 3 * l + k * l + i].as_f64())
        })
        .collect();
    Signal::from_rows(rows)
}

/// Token matrix `x_p = W·patch_p + b + pos_p`.
pub fn embed<F: Real>(patches: &[F], projection: &Linear<F>, positions: &[F], n_patches: usize) -> Vec<F> {
    let mut x = linear(patches, n_patches, projection);
    for (xi, &pi) in x.iter_mut().zip(positions) {
        *xi += pi;
    }
    x
}

/// Pinned train-time randomness of one encoder layer for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise<F> {
    pub attn_keep: bool,
    pub ffn_keep: bool,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`), empty when dropout is 0.
    pub attn_mask: Vec<F>,
    pub ffn_mask: Vec<F>,
}

/// Train-time randomness for one window: per-layer stochastic-depth
/// decisions and dropout masks.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowNoise<F> {
    pub layers: Vec<LayerNoise<F>>,
}

/// Keep/skip decisions for the (attention, FFN) branch of every layer.
pub fn sample_drop_path(cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<[bool; 2]> {
    (0..cfg.n_layers)
        .map(|_| {
            if cfg.drop_path > 0.0 {
                [!rng.gen_bool(cfg.drop_path), !rng.gen_bool(cfg.drop_path)]
            } else {
                [true, true]
            }
        })
        .collect()
}

impl<F: Real> WindowNoise<F> {
    /// Every branch kept, no dropout.
    pub fn none(cfg: &ModelConfig) -> Self {
        WindowNoise {
            layers: (0..cfg.n_layers)
                .map(|_| LayerNoise {
                    attn_keep: true,
                    ffn_keep: true,
                    attn_mask: Vec::new(),
                    ffn_mask: Vec::new(),
                })
                .collect(),
        }
    }

    /// Dropout masks for one window under fixed branch decisions.
    pub fn sample(cfg: &ModelConfig, keeps: &[[bool; 2]], rng: &mut impl Rng) -> Self {
        let n = cfg.n_patches * cfg.d_model;
        let p = cfg.dropout;
        let mask = |rng: &mut dyn rand::RngCore| -> Vec<F> {
            if p == 0.0 {
                return Vec::new();
            }
            let kept = F::lit(1.0 / (1.0 - p));
            (0..n)
                .map(|_| if rng.gen_bool(p) { F::zero() } else { kept })
                .collect()
        };
        WindowNoise {
            layers: keeps
                .iter()
                .map(|&[attn_keep, ffn_keep]| LayerNoise {
                    attn_keep,
                    ffn_keep,
                    attn_mask: mask(rng),
                    ffn_mask: mask(rng),
                })
                .collect(),
        }
    }
}

/// Inference or training with pinned randomness.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a, F> {
    Eval,
    Train(&'a WindowNoise<F>),
}

#[derive(Clone, Debug)]
struct AttnCache<F> {
    norm: NormCache<F>,
    u: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    ctx: Vec<F>,
    scale: Option<Vec<F>>,
}

#[derive(Clone, Debug)]
struct FfnCache<F> {
    norm: NormCache<F>,
    w: Vec<F>,
    pre: Vec<F>,
    act: Vec<F>,
    scale: Option<Vec<F>>,
}

#[derive(Clone, Debug)]
struct LayerCache<F> {
    attn: Option<AttnCache<F>>,
    ffn: Option<FfnCache<F>>,
}

/// Activations saved by [`forward_window`] for [`backward_window`].
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    patches: Vec<F>,
    layers: Vec<LayerCache<F>>,
    final_norm: NormCache<F>,
    pooled: Vec<F>,
}

impl<F: Real> ForwardCache<F> {
    /// Attention weights of `layer` as `h × P × P`, if that branch ran.
    pub fn attention_probs(&self, layer: usize) -> Option<&[F]> {
        self.layers.get(layer)?.attn.as_ref().map(|a| &a.probs[..])
    }

    /// Pooled representation fed to the head.
    pub fn pooled(&self) -> &[F] {
        &self.pooled
    }
}

/// Elementwise multiplier of a residual branch, `None` meaning identity.
fn branch_scale<F: Real>(keep: bool, drop_path: f64, mask: &[F], len: usize) -> Option<Option<Vec<F>>> {
    if !keep {
        return None;
    }
    let dp = if drop_path > 0.0 { F::lit(1.0 / (1.0 - drop_path)) } else { F::one() };
    if mask.is_empty() {
        Some(if dp == F::one() { None } else { Some(vec![dp; len]) })
    } else {
        Some(Some(mask.iter().map(|&m| m * dp).collect()))
    }
}

/// Multi-head scaled dot-product attention over `p` tokens.
/// Returns the concatenated head outputs and the `h × p × p` weights.
pub fn attention<F: Real>(q: &[F], k: &[F], v: &[F], p: usize, d: usize, h: usize) -> (Vec<F>, Vec<F>) {
    let dh = d / h;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let mut ctx = vec![F::zero(); p * d];
    let mut probs = vec![F::zero(); h * p * p];
    for head in 0..h {
        let off = head * dh;
        for i in 0..p {
            let row = &mut probs[(head * p + i) * p..(head * p + i + 1) * p];
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
            }
            softmax_in_place(row);
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for (j, &a) in row.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dh];
                for (c, &vv) in ci.iter_mut().zip(vj) {
                    *c += a * vv;
                }
            }
        }
    }
    (ctx, probs)
}

fn attention_backward<F: Real>(
    cache: &AttnCache<F>,
    dctx: &[F],
    p: usize,
    d: usize,
    h: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let dh = d / h;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = vec![F::zero(); p * d];
    let mut dk = vec![F::zero(); p * d];
    let mut dv = vec![F::zero(); p * d];
    let mut da = vec![F::zero(); p];
    for head in 0..h {
        let off = head * dh;
        for i in 0..p {
            let a = &cache.probs[(head * p + i) * p..(head * p + i + 1) * p];
            let dci = &dctx[i * d + off..i * d + off + dh];
            for j in 0..p {
                let vj = &v[j * d + off..j * d + off + dh];
                da[j] = dci.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                for t in 0..dh {
                    dv[j * d + off + t] += a[j] * dci[t];
                }
            }
            let dot: F = a.iter().zip(&da).map(|(&x, &y)| x * y).sum();
            for j in 0..p {
                let ds = a[j] * (da[j] - dot) * scale;
                if ds == F::zero() {
                    continue;
                }
                for t in 0..dh {
                    dq[i * d + off + t] += ds * k[j * d + off + t];
                    dk[j * d + off + t] += ds * q[i * d + off + t];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn check_finite<F: Real>(values: &[F], site: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(site()))
    }
}

fn layer_forward<F: Real>(
    layer: &EncoderLayer<F>,
    cfg: &ModelConfig,
    x: &mut [F],
    noise: Option<&LayerNoise<F>>,
) -> LayerCache<F> {
    let (p, d) = (cfg.n_patches, cfg.d_model);
    let eps = F::lit(cfg.ln_eps);
    let (attn_keep, ffn_keep) = noise.map_or((true, true), |n| (n.attn_keep, n.ffn_keep));
    let empty: &[F] = &[];
    let train = noise.is_some();
    let dp = if train { cfg.drop_path } else { 0.0 };

    let attn_scale = branch_scale(attn_keep, dp, noise.map_or(empty, |n| &n.attn_mask), p * d);
    let attn = attn_scale.map(|scale| {
        let (u, norm) = layer_norm(x, p, &layer.norm1, eps);
        let q = linear(&u, p, &layer.query);
        let k = linear(&u, p, &layer.key);
        let v = linear(&u, p, &layer.value);
        let (ctx, probs) = attention(&q, &k, &v, p, d, cfg.n_heads);
        let o = linear(&ctx, p, &layer.output);
        match &scale {
            Some(s) => x.iter_mut().zip(o.iter().zip(s)).for_each(|(xi, (&oi, &si))| *xi += oi * si),
            None => x.iter_mut().zip(&o).for_each(|(xi, &oi)| *xi += oi),
        }
        AttnCache { norm, u, q, k, v, probs, ctx, scale }
    });

    let ffn_scale = branch_scale(ffn_keep, dp, noise.map_or(empty, |n| &n.ffn_mask), p * d);
    let ffn = ffn_scale.map(|scale| {
        let (w, norm) = layer_norm(x, p, &layer.norm2, eps);
        let pre = linear(&w, p, &layer.ffn_in);
        let act: Vec<F> = pre.iter().map(|&v| gelu(v)).collect();
        let o = linear(&act, p, &layer.ffn_out);
        match &scale {
            Some(s) => x.iter_mut().zip(o.iter().zip(s)).for_each(|(xi, (&oi, &si))| *xi += oi * si),
            None => x.iter_mut().zip(&o).for_each(|(xi, &oi)| *xi += oi),
        }
        FfnCache { norm, w, pre, act, scale }
    });
    LayerCache { attn, ffn }
}

/// Runs one window through the encoder and returns the logits plus the
/// cache needed for the reverse pass.
pub fn forward_window<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    signal: &Signal,
    mode: Mode<'_, F>,
) -> Result<(Vec<F>, ForwardCache<F>)> {
    let patches = patchify::<F>(signal, cfg)?;
    forward_patches(params, cfg, patches, mode)
}

pub(crate) fn forward_patches<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    patches: Vec<F>,
    mode: Mode<'_, F>,
) -> Result<(Vec<F>, ForwardCache<F>)> {
    let (p, d) = (cfg.n_patches, cfg.d_model);
    let noise = match mode {
        Mode::Eval => None,
        Mode::Train(n) => {
            if n.layers.len() != cfg.n_layers {
                return Err(Error::invalid("noise does not match the layer count"));
            }
            Some(n)
        }
    };
    let mut x = embed(&patches, &params.projection, &params.positions, p);
    check_finite(&x, || "embedding".into())?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        layers.push(layer_forward(layer, cfg, &mut x, noise.map(|n| &n.layers[l])));
        check_finite(&x, || format!("encoder layer {l}"))?;
    }
    let (z, final_norm) = layer_norm(&x, p, &params.final_norm, F::lit(cfg.ln_eps));
    let pooled = match cfg.pooling {
        Pooling::Flatten => z,
        Pooling::Mean => {
            let inv = F::one() / F::from_usize(p).unwrap();
            (0..d)
                .map(|j| (0..p).map(|t| z[t * d + j]).sum::<F>() * inv)
                .collect()
        }
    };
    let logits = linear(&pooled, 1, &params.head);
    check_finite(&logits, || "classification head".into())?;
    Ok((
        logits,
        ForwardCache {
            patches,
            layers,
            final_norm,
            pooled,
        },
    ))
}

/// Eval-mode logits for one window.
pub fn forward<F: Real>(params: &ModelParams<F>, cfg: &ModelConfig, signal: &Signal) -> Result<Vec<F>> {
    forward_window(params, cfg, signal, Mode::Eval).map(|(logits, _)| logits)
}

fn add_into<F: Real>(acc: &mut [F], other: &[F]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Reverse pass for one window.
///
/// Accumulates parameter gradients of `dlogits · logits` into `grads` and
/// returns the gradient with respect to the input signal (`L·P × 3`).
pub fn backward_window<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    cache: &ForwardCache<F>,
    dlogits: &[F],
    grads: &mut ModelParams<F>,
) -> Signal {
    let d_patches = backward_patches(params, cfg, cache, dlogits, grads);
    unpatchify(&d_patches, cfg)
}

pub(crate) fn backward_patches<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    cache: &ForwardCache<F>,
    dlogits: &[F],
    grads: &mut ModelParams<F>,
) -> Vec<F> {
    let (p, d, h) = (cfg.n_patches, cfg.d_model, cfg.n_heads);
    let dpooled = linear_backward(&cache.pooled, 1, &params.head, dlogits, &mut grads.head);
    let dz = match cfg.pooling {
        Pooling::Flatten => dpooled,
        Pooling::Mean => {
            let inv = F::one() / F::from_usize(p).unwrap();
            (0..p * d).map(|i| dpooled[i % d] * inv).collect()
        }
    };
    let mut dx = layer_norm_backward(&cache.final_norm, &params.final_norm, &dz, &mut grads.final_norm);

    for ((layer, lc), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        if let Some(fc) = &lc.ffn {
            let dout: Vec<F> = match &fc.scale {
                Some(s) => dx.iter().zip(s).map(|(&a, &b)| a * b).collect(),
                None => dx.clone(),
            };
            let dact = linear_backward(&fc.act, p, &layer.ffn_out, &dout, &mut g.ffn_out);
            let dpre: Vec<F> = dact.iter().zip(&fc.pre).map(|(&a, &z)| a * gelu_grad(z)).collect();
            let dw = linear_backward(&fc.w, p, &layer.ffn_in, &dpre, &mut g.ffn_in);
            let dnorm = layer_norm_backward(&fc.norm, &layer.norm2, &dw, &mut g.norm2);
            add_into(&mut dx, &dnorm);
        }
        if let Some(ac) = &lc.attn {
            let dout: Vec<F> = match &ac.scale {
                Some(s) => dx.iter().zip(s).map(|(&a, &b)| a * b).collect(),
                None => dx.clone(),
            };
            let dctx = linear_backward(&ac.ctx, p, &layer.output, &dout, &mut g.output);
            let (dq, dk, dv) = attention_backward(ac, &dctx, p, d, h);
            let mut du = linear_backward(&ac.u, p, &layer.query, &dq, &mut g.query);
            add_into(&mut du, &linear_backward(&ac.u, p, &layer.key, &dk, &mut g.key));
            add_into(&mut du, &linear_backward(&ac.u, p, &layer.value, &dv, &mut g.value));
            let dnorm = layer_norm_backward(&ac.norm, &layer.norm1, &du, &mut g.norm1);
            add_into(&mut dx, &dnorm);
        }
    }
    linear_backward(&cache.patches, p, &params.projection, &dx, &mut grads.projection)
}
