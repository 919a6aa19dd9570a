mod common;

use common::{input_grad_error, oracle_forward, param_grad_errors, random_params, signal};
use patchtst_har::model::{
    attention, forward, forward_window, param_count, patchify, sample_drop_path, softmax, unpatchify, LayerNoise,
    Mode, ModelConfig, ModelParams, Pooling, WindowNoise,
};
use patchtst_har::normalize::Signal;
use patchtst_har::rng::substream;
use patchtst_har::train::Example;

fn small(pooling: Pooling) -> ModelConfig {
    ModelConfig {
        pooling,
        ..ModelConfig::plain(5, 4, 8, 2, 2, 4)
    }
}

#[test]
fn forward_matches_reference_implementation() {
    for pooling in [Pooling::Mean, Pooling::Flatten] {
        let cfg = small(pooling);
        let params = random_params(&cfg, 3);
        for seed in 0..5 {
            let x = signal(cfg.window_len(), seed);
            let ours = forward(&params, &cfg, &x).unwrap();
            let oracle = oracle_forward(&params, &cfg, x.rows());
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{pooling:?}: {a} vs {b}");
            }
            let ours32 = forward(&params.cast::<f32>(), &cfg, &x).unwrap();
            for (a, b) in ours32.iter().zip(&oracle) {
                assert!((*a as f64 - b).abs() < 1e-5, "f32 {pooling:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn default_architecture_matches_reference() {
    let cfg = ModelConfig {
        dropout: 0.0,
        drop_path: 0.0,
        ..ModelConfig::default()
    };
    let params = ModelParams::<f64>::init(&cfg, 5);
    let x = signal(50, 9);
    let ours = forward(&params, &cfg, &x).unwrap();
    let oracle = oracle_forward(&params, &cfg, x.rows());
    for (a, b) in ours.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn patchify_round_trip_and_layout() {
    let cfg = ModelConfig::default();
    let x = signal(50, 1);
    let p: Vec<f64> = patchify(&x, &cfg).unwrap();
    assert_eq!(p.len(), 10 * 15);
    // Second patch, y axis, third sample.
    assert_eq!(p[15 + 5 + 2], x.rows()[5 + 2][1]);
    assert_eq!(unpatchify(&p, &cfg), x);
    assert!(patchify::<f64>(&signal(49, 1), &cfg).is_err());
}

#[test]
fn mean_pooling_without_positions_ignores_patch_order() {
    let cfg = small(Pooling::Mean);
    let mut params = random_params(&cfg, 4);
    params.positions.iter_mut().for_each(|v| *v = 0.0);
    let x = signal(cfg.window_len(), 2);
    let l = cfg.patch_len;
    let order = [2usize, 0, 3, 1];
    let permuted = Signal::from_rows(
        order
            .iter()
            .flat_map(|&p| x.rows()[p * l..(p + 1) * l].to_vec())
            .collect(),
    );
    let a = forward(&params, &cfg, &x).unwrap();
    let b = forward(&params, &cfg, &permuted).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
    // With positions the order matters.
    let params = random_params(&cfg, 4);
    let a = forward(&params, &cfg, &x).unwrap();
    let b = forward(&params, &cfg, &permuted).unwrap();
    assert!(a.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-9));
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = ModelConfig::default();
    let params = ModelParams::<f64>::init(&cfg, 1);
    let (_, cache) = forward_window(&params, &cfg, &signal(50, 3), Mode::Eval).unwrap();
    for l in 0..cfg.n_layers {
        let probs = cache.attention_probs(l).unwrap();
        assert_eq!(probs.len(), cfg.n_heads * 10 * 10);
        for row in probs.chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    // Uniform keys give uniform attention and the mean of the values.
    let q = vec![0.3; 3 * 4];
    let k = vec![1.0; 3 * 4];
    let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let (ctx, probs) = attention(&q, &k, &v, 3, 4, 2);
    assert!(probs.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
    assert!((ctx[0] - 4.0).abs() < 1e-12);
}

#[test]
fn eval_mode_ignores_regularizers() {
    let base = ModelConfig::tiny(5);
    let reg = ModelConfig {
        dropout: 0.3,
        drop_path: 0.2,
        ..base.clone()
    };
    let params = ModelParams::<f64>::init(&base, 2);
    let x = signal(50, 4);
    assert_eq!(forward(&params, &base, &x).unwrap(), forward(&params, &reg, &x).unwrap());
    // With regularizers off, train mode keeping every branch equals eval mode.
    let plain = ModelConfig {
        dropout: 0.0,
        drop_path: 0.0,
        ..base.clone()
    };
    let noise = WindowNoise::none(&plain);
    let (train_all_kept, _) = forward_window(&params, &plain, &x, Mode::Train(&noise)).unwrap();
    assert_eq!(train_all_kept, forward(&params, &plain, &x).unwrap());
}

#[test]
fn skipped_branches_reduce_to_identity() {
    let cfg = small(Pooling::Mean);
    let params = random_params(&cfg, 6);
    let x = signal(cfg.window_len(), 5);
    let skip_all = WindowNoise {
        layers: (0..cfg.n_layers)
            .map(|_| LayerNoise {
                attn_keep: false,
                ffn_keep: false,
                attn_mask: Vec::new(),
                ffn_mask: Vec::new(),
            })
            .collect(),
    };
    let (logits, _) = forward_window(&params, &cfg, &x, Mode::Train(&skip_all)).unwrap();
    let mut bare = params.clone();
    bare.layers.clear();
    let bare_cfg = ModelConfig { n_layers: 0, ..cfg.clone() };
    let oracle = oracle_forward(&bare, &bare_cfg, x.rows());
    for (a, b) in logits.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for pooling in [Pooling::Mean, Pooling::Flatten] {
        let cfg = ModelConfig {
            dropout: 0.2,
            drop_path: 0.3,
            ..small(pooling)
        };
        let params = random_params(&cfg, 12);
        let example = Example {
            input: signal(cfg.window_len(), 8),
            target: 2,
        };
        let mut rng = substream(5, &[]);
        let keeps = [[true, false], [false, true]];
        let noise = WindowNoise::sample(&cfg, &keeps, &mut rng);
        for pinned in [None, Some(&noise)] {
            for (name, err) in param_grad_errors(&params, &cfg, &example, 1.7, pinned) {
                assert!(err < 1e-4, "{pooling:?} {name}: {err:e}");
            }
            assert!(input_grad_error(&params, &cfg, &example, pinned) < 1e-4);
        }
    }
}

#[test]
fn drop_path_decisions_follow_probability() {
    let cfg = ModelConfig {
        n_layers: 50,
        drop_path: 0.25,
        ..ModelConfig::tiny(4)
    };
    let mut rng = substream(1, &[]);
    let mut dropped = 0usize;
    for _ in 0..200 {
        dropped += sample_drop_path(&cfg, &mut rng)
            .iter()
            .flatten()
            .filter(|k| !**k)
            .count();
    }
    let rate = dropped as f64 / (200.0 * 100.0);
    assert!((rate - 0.25).abs() < 0.02, "{rate}");
}

#[test]
fn parameter_count_of_default_architecture() {
    let cfg = ModelConfig::default();
    assert_eq!(param_count(&cfg), 534_675);
    assert_eq!(ModelParams::<f32>::init(&cfg, 0).num_params(), 534_675);
}

#[test]
fn softmax_rejects_nan() {
    assert!(softmax(&[0.0, f64::NAN]).is_err());
    let p = softmax(&[1000.0f64, 0.0]).unwrap();
    assert_eq!(p.argmax(), 0);
}
