use std::collections::BTreeMap;

use super::config::{Modality, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Standard deviation of every Gaussian-initialized parameter.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Gaussian,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> TensorSpec {
    TensorSpec { name, shape, init }
}

pub fn layer_prefix(modality: Modality, layer: usize) -> String {
    format!("{}/layers/{layer}", modality.prefix())
}

fn block_specs(config: &ModelConfig, modality: Modality, layer: usize) -> Vec<TensorSpec> {
    let p = layer_prefix(modality, layer);
    let d = config.d_model;
    let h = config.d_mlp();
    vec![
        spec(format!("{p}/ln1_gamma"), vec![d], Init::Ones),
        spec(format!("{p}/ln1_beta"), vec![d], Init::Zeros),
        spec(format!("{p}/w_qkv"), vec![d, 3 * d], Init::Gaussian),
        spec(format!("{p}/b_qkv"), vec![3 * d], Init::Gaussian),
        spec(format!("{p}/w_o"), vec![d, d], Init::Gaussian),
        spec(format!("{p}/b_o"), vec![d], Init::Gaussian),
        spec(format!("{p}/ln2_gamma"), vec![d], Init::Ones),
        spec(format!("{p}/ln2_beta"), vec![d], Init::Zeros),
        spec(format!("{p}/mlp_w1"), vec![d, h], Init::Gaussian),
        spec(format!("{p}/mlp_b1"), vec![h], Init::Gaussian),
        spec(format!("{p}/mlp_w2"), vec![h, d], Init::Gaussian),
        spec(format!("{p}/mlp_b2"), vec![d], Init::Gaussian),
    ]
}

fn head_specs(config: &ModelConfig, modality: Modality) -> Vec<TensorSpec> {
    let m = modality.prefix();
    let d = config.d_model;
    vec![
        spec(format!("{m}/ln_final_gamma"), vec![d], Init::Ones),
        spec(format!("{m}/ln_final_beta"), vec![d], Init::Zeros),
        spec(
            format!("{m}/proj"),
            vec![d, config.d_shared],
            Init::Gaussian,
        ),
    ]
}

fn embedding_specs(config: &ModelConfig, modality: Modality) -> Vec<TensorSpec> {
    let d = config.d_model;
    match modality {
        Modality::Vision => vec![
            spec(
                "vision/patch_embed".into(),
                vec![config.patch_dim(), d],
                Init::Gaussian,
            ),
            spec("vision/class_token".into(), vec![d], Init::Gaussian),
            spec(
                "vision/pos_embed".into(),
                vec![config.n_tokens_v(), d],
                Init::Gaussian,
            ),
        ],
        Modality::Text => vec![
            spec(
                "text/token_embed".into(),
                vec![config.vocab_size, d],
                Init::Gaussian,
            ),
            spec(
                "text/pos_embed".into(),
                vec![config.max_text_len, d],
                Init::Gaussian,
            ),
        ],
    }
}

/// Every parameter in generation order: the vision tower (embeddings, blocks
/// bottom-up, head) followed by the text tower in the same layout. Entries are
/// drawn row-major from one stream in exactly this order.
pub fn tensor_specs(config: &ModelConfig) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    for modality in [Modality::Vision, Modality::Text] {
        out.extend(embedding_specs(config, modality));
        for l in 0..config.n_layers(modality) {
            out.extend(block_specs(config, modality, l));
        }
        out.extend(head_specs(config, modality));
    }
    out
}

/// Cascading-randomization stages for one tower, ordered from the output
/// downwards: head, last block, ..., first block, embeddings.
pub fn randomization_stages(config: &ModelConfig, modality: Modality) -> Vec<Vec<String>> {
    let names = |v: Vec<TensorSpec>| v.into_iter().map(|s| s.name).collect::<Vec<_>>();
    let mut stages = vec![names(head_specs(config, modality))];
    for l in (0..config.n_layers(modality)).rev() {
        stages.push(names(block_specs(config, modality, l)));
    }
    stages.push(names(embedding_specs(config, modality)));
    stages
}

fn fill(spec: &TensorSpec, rng: &mut Rng) -> Tensor {
    let n: usize = spec.shape.iter().product();
    let data = match spec.init {
        Init::Gaussian => (0..n).map(|_| INIT_STD * rng.gaussian()).collect(),
        Init::Ones => vec![1.0; n],
        Init::Zeros => vec![0.0; n],
    };
    Tensor::from_parts(spec.shape.clone(), data)
}

/// Named parameter set of the dual encoder. Every tensor listed by
/// [`tensor_specs`] is present with its configured shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl Weights {
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        for s in &specs {
            match tensors.get(&s.name) {
                None => return Err(Error::Consistency(format!("missing tensor {}", s.name))),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::Consistency(format!(
                        "tensor {} has shape {:?}, config implies {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                Some(t) if !t.is_finite() => return Err(Error::NonFinite("weights")),
                _ => {}
            }
        }
        if tensors.len() != specs.len() {
            let extra = tensors
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Consistency(format!("unexpected tensor {extra}")));
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Presence is guaranteed by construction.
    pub(crate) fn param(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    /// Copy with the named Gaussian tensors redrawn from a fresh stream.
    /// Layer-norm parameters keep their values.
    pub fn randomized(&self, names: &[String], seed: u64) -> Self {
        let mut out = self.clone();
        let mut rng = Rng::new(seed);
        for s in tensor_specs(&self.config) {
            if s.init == Init::Gaussian && names.contains(&s.name) {
                out.tensors.insert(s.name.clone(), fill(&s, &mut rng));
            }
        }
        out
    }
}

/// Deterministic weights for `config` from `seed`.
pub fn generate_weights(config: &ModelConfig, seed: u64) -> Result<Weights> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let tensors = tensor_specs(config)
        .iter()
        .map(|s| (s.name.clone(), fill(s, &mut rng)))
        .collect();
    Weights::from_tensors(config.clone(), tensors)
}

/// Seed of the stream used to re-randomize `stage` in sanity checks.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    derive_seed(seed, 0x5a17_0000 + stage as u64)
}
