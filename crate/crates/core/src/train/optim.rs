//! Gradient clipping, decoupled-weight-decay Adam and the cosine schedule.

use crate::model::{shapes, ModelConfig, ModelParams, Real};

use super::TrainConfig;

/// Global L2 norm over every learnable tensor, accumulated in f64.
pub fn global_norm<F: Real>(grads: &ModelParams<F>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|&g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `threshold / norm` when the global norm exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients<F: Real>(grads: &mut ModelParams<F>, threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = global_norm(grads);
    if norm > threshold {
        grads.scale(F::lit(threshold / norm));
    }
    norm
}

/// Learning rate for `epoch` of a cosine decay from `lr` to `lr_min`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let progress = epoch.min(cfg.epochs) as f64 / cfg.epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub step: u64,
    decays: Vec<bool>,
}

impl<F: Real> AdamW<F> {
    pub fn new(cfg: &ModelConfig) -> Self {
        AdamW {
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
            step: 0,
            decays: shapes(cfg).iter().map(|s| s.kind.decays()).collect(),
        }
    }

    /// One update with bias correction. Weight decay `θ ← θ - lr·wd·θ`
    /// touches weight matrices only.
    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &ModelParams<F>, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = cfg.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (fb1, fb2) = (F::lit(b1), F::lit(b2));
        let (one_b1, one_b2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
        let step_size = F::lit(lr / bc1);
        let inv_sqrt_bc2 = F::lit(1.0 / bc2.sqrt());
        let eps = F::lit(cfg.adam_eps);
        let decay = F::lit(lr * cfg.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(&self.decays);
        for ((((theta, g), m), v), &decays) in tensors {
            for i in 0..theta.len() {
                m[i] = fb1 * m[i] + one_b1 * g[i];
                v[i] = fb2 * v[i] + one_b2 * g[i] * g[i];
                let update = step_size * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
                if decays {
                    theta[i] -= decay * theta[i];
                }
                theta[i] -= update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cfg() -> ModelConfig {
        ModelConfig::plain(1, 1, 2, 0, 1, 2)
    }

    #[test]
    fn cosine_endpoints() {
        let cfg = TrainConfig::default();
        assert!((cosine_lr(0, &cfg) - 3e-4).abs() < 1e-18);
        assert!((cosine_lr(50, &cfg) - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(25, &cfg) - (3e-4 + 1e-6) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn clip_examples() {
        let cfg = scalar_cfg();
        let mut g = ModelParams::<f64>::zeros(&cfg);
        g.head.bias = vec![0.3, 0.4];
        let before = g.clone();
        assert!((clip_gradients(&mut g, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(g, before);

        g.head.bias = vec![0.0, 4.0];
        clip_gradients(&mut g, 1.0);
        assert_eq!(g.head.bias, vec![0.0, 1.0]);
        assert!((global_norm(&g) - 1.0).abs() < 1e-9);
        let once = g.clone();
        clip_gradients(&mut g, 1.0);
        assert_eq!(g, once);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = scalar_cfg();
        let tc = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::<f64>::zeros(&cfg);
        let mut g = ModelParams::<f64>::zeros(&cfg);
        g.head.weight[0] = 1.0;
        let mut opt = AdamW::new(&cfg);
        opt.step(&mut p, &g, 0.1, &tc);
        assert!((p.head.weight[0] + 0.1).abs() < 1e-9);
        assert_eq!(p.head.weight[1], 0.0);
    }

    #[test]
    fn decay_spares_biases_and_norms() {
        let cfg = ModelConfig::plain(5, 2, 4, 1, 2, 3);
        let tc = TrainConfig::default();
        let mut p = ModelParams::<f64>::init(&cfg, 9);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v += 0.5);
        }
        let before = p.clone();
        let g = ModelParams::<f64>::zeros(&cfg);
        let mut opt = AdamW::new(&cfg);
        opt.step(&mut p, &g, 0.1, &tc);
        for ((shape, a), b) in shapes(&cfg).iter().zip(p.tensors()).zip(before.tensors()) {
            for (&x, &y) in a.iter().zip(b) {
                if shape.kind.decays() {
                    assert!((x - y * (1.0 - 0.1 * 0.01)).abs() < 1e-15, "{}", shape.name);
                } else {
                    assert_eq!(x, y, "{}", shape.name);
                }
            }
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let cfg = ModelConfig::plain(5, 2, 4, 1, 2, 3);
        let tc = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::<f64>::init(&cfg, 2);
        let before = p.clone();
        AdamW::new(&cfg).step(&mut p, &ModelParams::zeros(&cfg), 0.01, &tc);
        assert_eq!(p, before);
    }
}
