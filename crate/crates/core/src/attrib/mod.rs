//! Gradient attribution for the dual encoder.

mod backprop;
mod finite_diff;
mod grad_eclip;
mod map;

pub use backprop::{backprop_to_attention, backprop_with_objective, LayerGradients, Objective};
pub use finite_diff::{finite_diff_similarity, SimilarityProbe};
pub use grad_eclip::{
    blend_similarity, combined_similarity, grad_eclip_layers, grad_eclip_map, grad_eclip_scores,
    grad_eclip_text, qk_similarity,
};
pub use map::{AttributionMap, Provenance};
