use serde::{Deserialize, Serialize};

use super::masking::{rank_descending, top_k_count};
use super::scorer::{ImageScorer, MaskScorer, TextScorer};
use crate::attrib::AttributionMap;
use crate::error::{Error, Result};
use crate::math::trapezoid_auc;
use crate::model::{Tokens, Weights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMode {
    /// Remove top-ranked units first, starting from the intact input.
    Deletion,
    /// Restore top-ranked units first, starting from the fully removed input.
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

/// Kept-unit masks for each step of a curve; nested by construction.
pub fn curve_masks(
    scores: &[f64],
    mode: CurveMode,
    steps: usize,
) -> Result<(Vec<f64>, Vec<Vec<bool>>)> {
    if steps < 1 {
        return Err(Error::Parameter("a curve needs at least one step".into()));
    }
    let n = scores.len();
    let ranking = rank_descending(scores);
    let mut fractions = Vec::with_capacity(steps + 1);
    let mut masks = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let k = top_k_count(f, n)?;
        let mut kept = vec![mode == CurveMode::Deletion; n];
        for &u in &ranking[..k] {
            kept[u] = mode == CurveMode::Insertion;
        }
        fractions.push(f);
        masks.push(kept);
    }
    Ok((fractions, masks))
}

/// Scores a curve on any unit-mask model. Every point, endpoints included, is
/// an actual evaluation of the model.
pub fn perturbation_curve(
    scorer: &dyn MaskScorer,
    scores: &[f64],
    mode: CurveMode,
    steps: usize,
) -> Result<PerturbationCurve> {
    if scores.len() != scorer.units() {
        return Err(Error::Dimension(format!(
            "{} scores for {} units",
            scores.len(),
            scorer.units()
        )));
    }
    let (fractions, masks) = curve_masks(scores, mode, steps)?;
    let values = masks
        .iter()
        .map(|m| scorer.score(m))
        .collect::<Result<Vec<_>>>()?;
    let auc = trapezoid_auc(&fractions, &values)?;
    Ok(PerturbationCurve {
        fractions,
        scores: values,
        auc,
    })
}

pub fn deletion_curve(
    w: &Weights,
    image: &Tensor,
    tokens: &Tokens,
    map: &AttributionMap,
    steps: usize,
) -> Result<PerturbationCurve> {
    let scorer = ImageScorer::new(w, image, tokens, 0.0)?;
    perturbation_curve(&scorer, map.data(), CurveMode::Deletion, steps)
}

pub fn insertion_curve(
    w: &Weights,
    image: &Tensor,
    tokens: &Tokens,
    map: &AttributionMap,
    steps: usize,
) -> Result<PerturbationCurve> {
    let scorer = ImageScorer::new(w, image, tokens, 0.0)?;
    perturbation_curve(&scorer, map.data(), CurveMode::Insertion, steps)
}

/// Deletion or insertion over content tokens, driven by a per-position token
/// map. `steps = None` uses one step per content token.
pub fn text_perturbation_curve(
    w: &Weights,
    image: &Tensor,
    tokens: &Tokens,
    token_scores: &AttributionMap,
    mode: CurveMode,
    steps: Option<usize>,
) -> Result<PerturbationCurve> {
    let scorer = TextScorer::new(w, image, tokens)?;
    if token_scores.len() != tokens.ids.len() {
        return Err(Error::Dimension(format!(
            "{} token scores for {} positions",
            token_scores.len(),
            tokens.ids.len()
        )));
    }
    let unit_scores: Vec<f64> = scorer
        .positions()
        .iter()
        .map(|&p| token_scores.data()[p])
        .collect();
    let steps = steps.unwrap_or(scorer.units());
    perturbation_curve(&scorer, &unit_scores, mode, steps)
}
