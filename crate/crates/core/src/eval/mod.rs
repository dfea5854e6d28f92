//! Perturbation-based faithfulness metrics and controls.

mod confidence;
mod curves;
mod masking;
mod occlusion;
mod planted;
mod report;
mod sanity;
mod scorer;
mod timing;

pub use confidence::{
    confidence_drop_increase, confidence_sample, ConfidenceSample, ConfidenceSummary,
};
pub use curves::{
    curve_masks, deletion_curve, insertion_curve, perturbation_curve, text_perturbation_curve,
    CurveMode, PerturbationCurve,
};
pub use masking::{
    fill_patches, inverse_map, mask_image, random_attribution, rank_descending, top_k_count,
    top_k_mask, MaskMode,
};
pub use occlusion::{occlusion_series, occlusion_sets, OcclusionStep, DEFAULT_LEVELS};
pub use planted::PlantedModel;
pub use report::{evaluate_sample, Aggregates, EvalReport, SampleRow, TimingSummary};
pub use sanity::{sanity_randomization, DepthSummary, SanityReport};
pub use scorer::{ImageScorer, MaskScorer, TextScorer};
pub use timing::{timing_overhead, TimingReport};

/// Default retained fraction for confidence drop and increase.
pub const DEFAULT_RETAIN: f64 = 0.5;
/// Default number of image-curve steps (one patch per step on a 4x4 grid).
pub const DEFAULT_STEPS: usize = 16;
