//! Shared inputs for the criterion benches.

use mmel_core::model::{generate_weights, preprocess, tokenize};
use mmel_core::rng::Rng;
use mmel_core::{EnhancerParams, ModelConfig, PreprocessConfig, Tensor, Tokens, Weights};

/// Weights, enhancer, a uniform-noise image and a short caption, all derived
/// from `seed`.
pub struct Workload {
    pub weights: Weights,
    pub enhancer: EnhancerParams,
    pub image: Tensor,
    pub tokens: Tokens,
}

impl Workload {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let weights = generate_weights(config, seed).expect("valid config");
        let enhancer = EnhancerParams::generate(config, seed);
        let mut rng = Rng::new(seed ^ 0x5eed);
        let s = config.image_size;
        let raw = Tensor::new(
            vec![s, s, 3],
            (0..s * s * 3).map(|_| rng.uniform()).collect(),
        )
        .expect("shape matches data");
        let image = preprocess(&raw, &PreprocessConfig::default(), s).expect("square image");
        let tokens = tokenize("a red square on grass", config);
        Self {
            weights,
            enhancer,
            image,
            tokens,
        }
    }
}
