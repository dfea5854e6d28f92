#![allow(dead_code)]

use mmel_core::model::{generate_weights, preprocess, tokenize};
use mmel_core::rng::Rng;
use mmel_core::{ModelConfig, PreprocessConfig, Tensor, Tokens, Weights};

/// Two blocks, width 8, two heads, five tokens per tower.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 4,
        d_model: 8,
        n_heads: 2,
        n_layers_v: 2,
        n_layers_t: 2,
        mlp_ratio: 4,
        d_shared: 4,
        vocab_size: 16,
        max_text_len: 5,
        ln_eps: 1e-5,
    }
}

pub fn random_image(config: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let s = config.image_size;
    let raw = Tensor::new(
        vec![s, s, 3],
        (0..s * s * 3).map(|_| rng.uniform()).collect(),
    )
    .unwrap();
    preprocess(&raw, &PreprocessConfig::default(), s).unwrap()
}

/// Weights with every Gaussian tensor multiplied by `gain`, so the
/// nonlinearities operate away from their linear regime.
pub fn scaled_weights(config: &ModelConfig, seed: u64, gain: f64) -> Weights {
    let w = generate_weights(config, seed).unwrap();
    let tensors = w
        .tensors()
        .iter()
        .map(|(k, t)| {
            let scaled = if k.contains("ln") {
                t.clone()
            } else {
                t.scale(gain)
            };
            (k.clone(), scaled)
        })
        .collect();
    Weights::from_tensors(config.clone(), tensors).unwrap()
}

pub fn text(config: &ModelConfig, s: &str) -> Tokens {
    tokenize(s, config)
}

pub fn rel_err(estimate: &Tensor, exact: &Tensor) -> f64 {
    let scale = exact.max_abs();
    let diff = estimate
        .data()
        .iter()
        .zip(exact.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}
