//! The desk-scale dual encoder: configuration, parameters, tokenizer,
//! preprocessing and recorded forward passes.

mod config;
mod encoder;
mod preprocess;
mod tokenizer;
mod weight_file;
mod weights;

pub use config::{Modality, ModelConfig, PreprocessConfig};
pub use encoder::{
    encode_image, encode_text, similarity, text_input, vision_input, EncoderActivations,
    HeadRecord, LayerRecord, NormCache,
};
pub(crate) use encoder::{head_forward, layer_norm_rows, run_layers, BlockParams};
pub use preprocess::{denormalize, patchify, preprocess};
pub use tokenizer::{fnv1a64, tokenize, word_id, Tokens, BOS, EOS, N_SPECIAL, PAD};
pub use weight_file::{content_hash, load_weights, save_weights, WeightFile, MAGIC};
pub use weights::{
    generate_weights, randomization_stages, stage_seed, tensor_specs, Init, TensorSpec, Weights,
    INIT_STD,
};
