use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::real::Real;
use crate::rng::{substream, tag};

/// Whether AdamW weight decay applies to a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

/// Name, kind and element count of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorShape {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `y = x·W + b` with `W` stored row-major as `in_dim × out_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Linear<F> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![F::zero(); in_dim * out_dim],
            bias: vec![F::zero(); out_dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

impl<F: Real> LayerNorm<F> {
    fn identity(d: usize) -> Self {
        LayerNorm {
            gamma: vec![F::one(); d],
            beta: vec![F::zero(); d],
        }
    }
}

/// One pre-norm transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<F> {
    pub norm1: LayerNorm<F>,
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub norm2: LayerNorm<F>,
    pub ffn_in: Linear<F>,
    pub ffn_out: Linear<F>,
}

/// All parameters of one encoder. The same type carries gradients and
/// optimizer moments; `positions` is a fixed sinusoidal table and never
/// appears in [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub projection: Linear<F>,
    pub layers: Vec<EncoderLayer<F>>,
    pub final_norm: LayerNorm<F>,
    pub head: Linear<F>,
    pub positions: Vec<F>,
}

/// Shape list of every learnable tensor, in [`ModelParams::tensors`] order.
pub fn shapes(cfg: &ModelConfig) -> Vec<TensorShape> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    let mut push = |name: String, kind: ParamKind, dims: Vec<usize>| out.push(TensorShape { name, kind, dims });
    let linear = |push: &mut dyn FnMut(String, ParamKind, Vec<usize>), name: &str, i: usize, o: usize| {
        push(format!("{name}.weight"), ParamKind::Weight, vec![i, o]);
        push(format!("{name}.bias"), ParamKind::Bias, vec![o]);
    };
    let norm = |push: &mut dyn FnMut(String, ParamKind, Vec<usize>), name: &str| {
        push(format!("{name}.gamma"), ParamKind::NormScale, vec![d]);
        push(format!("{name}.beta"), ParamKind::NormShift, vec![d]);
    };
    linear(&mut push, "projection", cfg.patch_dim(), d);
    for l in 0..cfg.n_layers {
        norm(&mut push, &format!("layers.{l}.norm1"));
        for part in ["query", "key", "value", "output"] {
            linear(&mut push, &format!("layers.{l}.{part}"), d, d);
        }
        norm(&mut push, &format!("layers.{l}.norm2"));
        linear(&mut push, &format!("layers.{l}.ffn_in"), d, cfg.ffn_hidden);
        linear(&mut push, &format!("layers.{l}.ffn_out"), cfg.ffn_hidden, d);
    }
    norm(&mut push, "final_norm");
    linear(&mut push, "head", cfg.head_in(), cfg.n_classes);
    out
}

/// Interleaved sin/cos position table, `P × d` row-major.
pub fn sinusoidal_positions<F: Real>(n_positions: usize, d: usize) -> Vec<F> {
    let mut table = vec![F::zero(); n_positions * d];
    for p in 0..n_positions {
        for i in (0..d).step_by(2) {
            let freq = 10000f64.powf(-(i as f64) / d as f64);
            let angle = p as f64 * freq;
            table[p * d + i] = F::lit(angle.sin());
            if i + 1 < d {
                table[p * d + i + 1] = F::lit(angle.cos());
            }
        }
    }
    table
}

const INIT_STD: f64 = 0.02;

fn trunc_normal<F: Real>(n: usize, rng: &mut impl Rng) -> Vec<F> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * INIT_STD {
                break F::lit(v);
            }
        })
        .collect()
}

impl<F: Real> ModelParams<F> {
    /// All-zero tensors (LayerNorm scales included), used for gradients and moments.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let zero_norm = || LayerNorm {
            gamma: vec![F::zero(); d],
            beta: vec![F::zero(); d],
        };
        ModelParams {
            projection: Linear::zeros(cfg.patch_dim(), d),
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer {
                    norm1: zero_norm(),
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    output: Linear::zeros(d, d),
                    norm2: zero_norm(),
                    ffn_in: Linear::zeros(d, cfg.ffn_hidden),
                    ffn_out: Linear::zeros(cfg.ffn_hidden, d),
                })
                .collect(),
            final_norm: zero_norm(),
            head: Linear::zeros(cfg.head_in(), cfg.n_classes),
            positions: sinusoidal_positions(cfg.n_patches, d),
        }
    }

    /// Truncated-normal (std 0.02, cut at 2σ) weights, zero biases, identity norms.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = substream(seed, &[tag::INIT]);
        let mut p = Self::zeros(cfg);
        let d = cfg.d_model;
        let mut fill = |lin: &mut Linear<F>| lin.weight = trunc_normal(lin.weight.len(), &mut rng);
        fill(&mut p.projection);
        for layer in &mut p.layers {
            layer.norm1 = LayerNorm::identity(d);
            layer.norm2 = LayerNorm::identity(d);
            for lin in [
                &mut layer.query,
                &mut layer.key,
                &mut layer.value,
                &mut layer.output,
                &mut layer.ffn_in,
                &mut layer.ffn_out,
            ] {
                fill(lin);
            }
        }
        p.final_norm = LayerNorm::identity(d);
        fill(&mut p.head);
        p
    }

    /// Learnable tensors in [`shapes`] order.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![&self.projection.weight, &self.projection.bias];
        for l in &self.layers {
            out.extend([&l.norm1.gamma[..], &l.norm1.beta]);
            for lin in [&l.query, &l.key, &l.value, &l.output] {
                out.extend([&lin.weight[..], &lin.bias]);
            }
            out.extend([&l.norm2.gamma[..], &l.norm2.beta]);
            out.extend([&l.ffn_in.weight[..], &l.ffn_in.bias]);
            out.extend([&l.ffn_out.weight[..], &l.ffn_out.bias]);
        }
        out.extend([&self.final_norm.gamma[..], &self.final_norm.beta]);
        out.extend([&self.head.weight[..], &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![&mut self.projection.weight, &mut self.projection.bias];
        for l in &mut self.layers {
            out.push(&mut l.norm1.gamma);
            out.push(&mut l.norm1.beta);
            for lin in [&mut l.query, &mut l.key, &mut l.value, &mut l.output] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
            out.push(&mut l.norm2.gamma);
            out.push(&mut l.norm2.beta);
            out.push(&mut l.ffn_in.weight);
            out.push(&mut l.ffn_in.bias);
            out.push(&mut l.ffn_out.weight);
            out.push(&mut l.ffn_out.bias);
        }
        out.push(&mut self.final_norm.gamma);
        out.push(&mut self.final_norm.beta);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other` elementwise over learnable tensors.
    pub fn add_assign(&mut self, other: &ModelParams<F>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self, cfg: &ModelConfig) -> Option<String> {
        shapes(cfg)
            .into_iter()
            .zip(self.tensors())
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(s, _)| s.name)
    }

    /// Converts to another scalar type.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let c = |v: &Vec<F>| v.iter().map(|&x| G::lit(x.as_f64())).collect::<Vec<G>>();
        let lin = |l: &Linear<F>| Linear {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight: c(&l.weight),
            bias: c(&l.bias),
        };
        let norm = |n: &LayerNorm<F>| LayerNorm {
            gamma: c(&n.gamma),
            beta: c(&n.beta),
        };
        ModelParams {
            projection: lin(&self.projection),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    norm1: norm(&l.norm1),
                    query: lin(&l.query),
                    key: lin(&l.key),
                    value: lin(&l.value),
                    output: lin(&l.output),
                    norm2: norm(&l.norm2),
                    ffn_in: lin(&l.ffn_in),
                    ffn_out: lin(&l.ffn_out),
                })
                .collect(),
            final_norm: norm(&self.final_norm),
            head: lin(&self.head),
            positions: c(&self.positions),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_match_tensors() {
        let cfg = ModelConfig::plain(5, 4, 8, 2, 2, 4);
        let p = ModelParams::<f64>::init(&cfg, 1);
        let s = shapes(&cfg);
        let t = p.tensors();
        assert_eq!(s.len(), t.len());
        for (shape, tensor) in s.iter().zip(&t) {
            assert_eq!(shape.len(), tensor.len(), "{}", shape.name);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::tiny(4);
        let a = ModelParams::<f32>::init(&cfg, 5);
        assert_eq!(a, ModelParams::<f32>::init(&cfg, 5));
        assert_ne!(a, ModelParams::<f32>::init(&cfg, 6));
        assert!(a.projection.weight.iter().all(|w| w.abs() <= 0.04));
        assert!(a.head.bias.iter().all(|&b| b == 0.0));
        assert!(a.layers[0].norm1.gamma.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn positions_interleave_sin_cos() {
        let t: Vec<f64> = sinusoidal_positions(3, 4);
        assert_eq!(t[0..4], [0.0, 1.0, 0.0, 1.0]);
        assert!((t[4] - 1f64.sin()).abs() < 1e-15);
        assert!((t[5] - 1f64.cos()).abs() < 1e-15);
        assert!((t[6] - 0.01f64.sin()).abs() < 1e-15);
    }
}
