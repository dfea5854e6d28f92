//! Gradient attribution for a CLIP-like dual encoder with multi-scale
//! semantic enhancement, plus a perturbation-based faithfulness harness.
//!
//! Modules:
//! - [`math`]: numeric kernels (matrix products, softmax, layer norm, AUC,
//!   rank correlation).
//! - [`model`]: the desk-scale dual encoder and its weight file.
//! - [`attrib`]: reverse-mode gradients to attention outputs, the baseline
//!   attribution map and a finite-difference oracle.
//! - [`enhancer`]: the semantic relationship module and full pipeline.
//! - [`eval`]: deletion/insertion curves, confidence metrics, occlusion,
//!   randomization sanity checks and timing.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attrib;
pub mod enhancer;
mod error;
pub mod eval;
pub mod math;
pub mod method;
pub mod model;
pub mod rng;
mod tensor;

pub use attrib::{AttributionMap, LayerGradients, Objective, Provenance};
pub use enhancer::{EnhancerParams, EnhancerScalars, MmelOutput};
pub use error::{Error, Result};
pub use method::{AttributionRequest, Method};
pub use model::{EncoderActivations, Modality, ModelConfig, PreprocessConfig, Tokens, Weights};
pub use tensor::Tensor;
