use serde::{Deserialize, Serialize};

use super::masking::{top_k_count, top_k_mask};
use super::scorer::MaskScorer;
use crate::error::{Error, Result};

/// Similarity before and after keeping only the top-ranked units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSample {
    pub c: f64,
    pub c_keep: f64,
    /// `max(0, (c - c_keep) / c) * 100`; `None` when `c <= 0`.
    pub drop: Option<f64>,
    /// Strict `c_keep > c`.
    pub increase: bool,
}

impl ConfidenceSample {
    pub fn from_scores(c: f64, c_keep: f64) -> Self {
        let drop = (c > 0.0).then(|| ((c - c_keep) / c).max(0.0) * 100.0);
        Self {
            c,
            c_keep,
            drop,
            increase: c_keep > c,
        }
    }

    pub fn excluded(&self) -> bool {
        self.drop.is_none()
    }
}

pub fn confidence_sample(
    scorer: &dyn MaskScorer,
    scores: &[f64],
    retain_fraction: f64,
) -> Result<ConfidenceSample> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "retain fraction {retain_fraction} outside (0, 1]"
        )));
    }
    if scores.len() != scorer.units() {
        return Err(Error::Dimension(format!(
            "{} scores for {} units",
            scores.len(),
            scorer.units()
        )));
    }
    let k = top_k_count(retain_fraction, scores.len())?;
    let c = scorer.unperturbed()?;
    let c_keep = scorer.score(&top_k_mask(scores, k))?;
    Ok(ConfidenceSample::from_scores(c, c_keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub mean_drop: f64,
    pub increase_pct: f64,
    pub included: usize,
    pub excluded: usize,
}

/// Mean drop and percentage of increases over samples with `c > 0`.
pub fn confidence_drop_increase(samples: &[ConfidenceSample]) -> Result<ConfidenceSummary> {
    let included: Vec<&ConfidenceSample> = samples.iter().filter(|s| !s.excluded()).collect();
    if included.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} samples have non-positive similarity",
            samples.len()
        )));
    }
    let n = included.len() as f64;
    let mean_drop = included.iter().filter_map(|s| s.drop).sum::<f64>() / n;
    let increases = included.iter().filter(|s| s.increase).count();
    Ok(ConfidenceSummary {
        mean_drop,
        increase_pct: increases as f64 / n * 100.0,
        included: included.len(),
        excluded: samples.len() - included.len(),
    })
}
