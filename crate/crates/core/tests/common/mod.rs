#![allow(dead_code)]

use patchtst_har::augment::{apply, draw_from, AugPolicy};
use patchtst_har::dataset::{Sample, Window};
use patchtst_har::model::{forward_window, Mode, ModelConfig, ModelParams, Pooling, WindowNoise};
use patchtst_har::normalize::Signal;
use patchtst_har::rng::substream;
use patchtst_har::train::{example_gradients, smoothed_ce_loss, Example};

/// Straight-line reference forward pass in f64, eval mode.
///
/// Written from the architecture description with plain index loops and no
/// shared helpers, so that it can serve as an oracle for the library.
pub fn oracle_forward(w: &ModelParams<f64>, cfg: &ModelConfig, x: &[[f64; 3]]) -> Vec<f64> {
    let (l, p, d, h) = (cfg.patch_len, cfg.n_patches, cfg.d_model, cfg.n_heads);
    let dh = d / h;
    let eps = cfg.ln_eps;

    let lin = |input: &[f64], rows: usize, m: &patchtst_har::model::Linear<f64>| -> Vec<f64> {
        let mut out = vec![0.0; rows * m.out_dim];
        for r in 0..rows {
            for o in 0..m.out_dim {
                let mut s = m.bias[o];
                for i in 0..m.in_dim {
                    s += input[r * m.in_dim + i] * m.weight[i * m.out_dim + o];
                }
                out[r * m.out_dim + o] = s;
            }
        }
        out
    };
    let norm = |input: &[f64], ln: &patchtst_har::model::LayerNorm<f64>| -> Vec<f64> {
        let mut out = vec![0.0; p * d];
        for r in 0..p {
            let row = &input[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            for j in 0..d {
                out[r * d + j] = (row[j] - mean) / (var + eps).sqrt() * ln.gamma[j] + ln.beta[j];
            }
        }
        out
    };

    // Patch p holds samples p·L .. p·L+L-1 as [x.., y.., z..].
    let mut patches = vec![0.0; p * 3 * l];
    for pi in 0..p {
        for axis in 0..3 {
            for i in 0..l {
                patches[pi * 3 * l + axis * l + i] = x[pi * l + i][axis];
            }
        }
    }
    let mut tok = lin(&patches, p, &w.projection);
    for pi in 0..p {
        for j in 0..d {
            let freq = 10000f64.powf(-((j - j % 2) as f64) / d as f64);
            let angle = pi as f64 * freq;
            tok[pi * d + j] += if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }

    for layer in &w.layers {
        let u = norm(&tok, &layer.norm1);
        let q = lin(&u, p, &layer.query);
        let k = lin(&u, p, &layer.key);
        let v = lin(&u, p, &layer.value);
        let mut ctx = vec![0.0; p * d];
        for head in 0..h {
            for i in 0..p {
                let mut scores = vec![0.0; p];
                for j in 0..p {
                    let mut s = 0.0;
                    for t in 0..dh {
                        s += q[i * d + head * dh + t] * k[j * d + head * dh + t];
                    }
                    scores[j] = s / (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..p {
                    for t in 0..dh {
                        ctx[i * d + head * dh + t] += e[j] / z * v[j * d + head * dh + t];
                    }
                }
            }
        }
        let o = lin(&ctx, p, &layer.output);
        for i in 0..p * d {
            tok[i] += o[i];
        }
        let u2 = norm(&tok, &layer.norm2);
        let hid = lin(&u2, p, &layer.ffn_in);
        let act: Vec<f64> = hid
            .iter()
            .map(|&a| 0.5 * a * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (a + 0.044715 * a * a * a)).tanh()))
            .collect();
        let o2 = lin(&act, p, &layer.ffn_out);
        for i in 0..p * d {
            tok[i] += o2[i];
        }
    }
    let fin = norm(&tok, &w.final_norm);
    let pooled: Vec<f64> = match cfg.pooling {
        Pooling::Flatten => fin,
        Pooling::Mean => (0..d).map(|j| (0..p).map(|t| fin[t * d + j]).sum::<f64>() / p as f64).collect(),
    };
    lin(&pooled, 1, &w.head)
}

/// Symmetric relative error with an absolute floor for near-zero pairs.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub const FD_STEP: f64 = 1e-5;

pub fn signal(rows: usize, seed: u64) -> Signal {
    use rand::Rng;
    let mut rng = substream(seed, &[7]);
    Signal::from_rows((0..rows).map(|_| [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0))).collect())
}

/// Params with every tensor (LayerNorm included) randomly perturbed, so that
/// no gradient is trivially zero.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    use rand::Rng;
    let mut params = ModelParams::<f64>::init(cfg, seed);
    let mut rng = substream(seed, &[8]);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    params
}

fn loss_of(params: &ModelParams<f64>, cfg: &ModelConfig, input: &Signal, target: usize, weight: f64, noise: Option<&WindowNoise<f64>>) -> f64 {
    let mode = noise.map_or(Mode::Eval, Mode::Train);
    let (logits, _) = forward_window(params, cfg, input, mode).unwrap();
    smoothed_ce_loss(&logits, target, 0.1, weight).unwrap().0
}

/// Max relative error between analytic and central-difference gradients,
/// per named parameter tensor.
pub fn param_grad_errors(
    params: &ModelParams<f64>,
    cfg: &ModelConfig,
    example: &Example,
    weight: f64,
    noise: Option<&WindowNoise<f64>>,
) -> Vec<(String, f64)> {
    let mut grads = ModelParams::<f64>::zeros(cfg);
    let mode = noise.map_or(Mode::Eval, Mode::Train);
    example_gradients(params, cfg, example, weight, 0.1, mode, &mut grads).unwrap();
    let names: Vec<String> = patchtst_har::model::shapes(cfg).into_iter().map(|s| s.name).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..analytic[ti].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= FD_STEP;
            let fd = (loss_of(&plus, cfg, &example.input, example.target, weight, noise)
                - loss_of(&minus, cfg, &example.input, example.target, weight, noise))
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[ti][i], fd));
        }
        out.push((name.clone(), worst));
    }
    out
}

/// Max relative error of the input gradient.
pub fn input_grad_error(params: &ModelParams<f64>, cfg: &ModelConfig, example: &Example, noise: Option<&WindowNoise<f64>>) -> f64 {
    let mut grads = ModelParams::<f64>::zeros(cfg);
    let mode = noise.map_or(Mode::Eval, Mode::Train);
    let (_, dinput) = example_gradients(params, cfg, example, 1.0, 0.1, mode, &mut grads).unwrap();
    let mut worst = 0.0f64;
    for t in 0..example.input.len() {
        for k in 0..3 {
            let mut plus = example.input.clone();
            plus.rows_mut()[t][k] += FD_STEP;
            let mut minus = example.input.clone();
            minus.rows_mut()[t][k] -= FD_STEP;
            let fd = (loss_of(params, cfg, &plus, example.target, 1.0, noise)
                - loss_of(params, cfg, &minus, example.target, 1.0, noise))
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(dinput.rows()[t][k], fd));
        }
    }
    worst
}

/// Applies one independent policy draw to each window, on raw samples.
pub fn perturb(windows: &[Window], policy: &AugPolicy, seed: u64, copy: u64) -> Vec<Window> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = substream(seed, &[0x7e57, copy, i as u64]);
            let draw = draw_from(policy, &mut rng);
            let out = apply(&Signal::from_window(w), &draw, &mut rng);
            Window {
                id: format!("{}#{copy}", w.id),
                samples: out.rows().iter().map(|&r| Sample::from(r)).collect(),
                ..w.clone()
            }
        })
        .collect()
}
