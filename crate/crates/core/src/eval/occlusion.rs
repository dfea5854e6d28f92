use super::masking::{rank_descending, top_k_count};
use super::scorer::ImageScorer;
use super::scorer::MaskScorer;
use crate::attrib::AttributionMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEVELS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionStep {
    pub level: f64,
    /// Removed patch flags.
    pub occluded: Vec<bool>,
    pub image: Tensor,
    pub similarity: f64,
}

/// Removed-patch sets for each level; nested because every level takes a
/// prefix of one ranking.
pub fn occlusion_sets(scores: &[f64], levels: &[f64]) -> Result<Vec<Vec<bool>>> {
    if levels.is_empty() {
        return Err(Error::Parameter("no occlusion levels".into()));
    }
    let ranking = rank_descending(scores);
    levels
        .iter()
        .map(|&f| {
            let k = top_k_count(f, scores.len())?;
            let mut occ = vec![false; scores.len()];
            for &i in &ranking[..k] {
                occ[i] = true;
            }
            Ok(occ)
        })
        .collect()
}

/// Remove the top-ranked patches at each level and rescore.
pub fn occlusion_series(
    scorer: &ImageScorer<'_>,
    map: &AttributionMap,
    levels: &[f64],
) -> Result<Vec<OcclusionStep>> {
    if map.extents().is_none() || map.len() != scorer.units() {
        return Err(Error::Dimension(format!(
            "occlusion needs a {}-patch grid map",
            scorer.units()
        )));
    }
    let sets = occlusion_sets(map.data(), levels)?;
    levels
        .iter()
        .zip(sets)
        .map(|(&level, occluded)| {
            let kept: Vec<bool> = occluded.iter().map(|o| !o).collect();
            Ok(OcclusionStep {
                level,
                image: scorer.masked_image(&kept)?,
                similarity: scorer.score(&kept)?,
                occluded,
            })
        })
        .collect()
}
