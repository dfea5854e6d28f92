use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::spearman_rank;
use crate::method::{AttributionRequest, Method};
use crate::model::{randomization_stages, stage_seed, Modality, Tokens, Weights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    /// Number of vision-tower stages re-randomized, counted from the output.
    pub depth: usize,
    /// Median |rho| over seeds with a defined correlation.
    pub median_abs_rho: Option<f64>,
    pub undefined: usize,
    /// Signed correlation per seed, in seed order.
    pub rho: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub depths: Vec<DepthSummary>,
    /// Spearman correlation between depth and median |rho|.
    pub trend: Option<f64>,
}

impl SanityReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Evaluation(format!("csv: {e}"));
        w.write_record(["depth", "median_abs_rho", "undefined", "seeds"])
            .map_err(csv_err)?;
        for d in &self.depths {
            w.write_record([
                d.depth.to_string(),
                d.median_abs_rho
                    .map(|v| format!("{v:.17e}"))
                    .unwrap_or_default(),
                d.undefined.to_string(),
                d.rho.len().to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Evaluation(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Weights with the first `depth` vision stages redrawn. Each stage uses its
/// own stream, so a stage has the same values at every depth that includes it.
fn cascade(w: &Weights, seed: u64, depth: usize) -> Weights {
    let stages = randomization_stages(w.config(), Modality::Vision);
    let mut out = w.clone();
    for (i, names) in stages.iter().enumerate().take(depth) {
        out = out.randomized(names, stage_seed(seed, i));
    }
    out
}

/// Cascading weight randomization of the vision tower. `depths` defaults to
/// every stage count from 0 to the full tower.
pub fn sanity_randomization(
    req: &AttributionRequest<'_>,
    method: Method,
    image: &Tensor,
    tokens: &Tokens,
    seeds: &[u64],
    depths: Option<&[usize]>,
) -> Result<SanityReport> {
    if seeds.is_empty() {
        return Err(Error::Parameter(
            "sanity check needs at least one seed".into(),
        ));
    }
    let n_stages = randomization_stages(req.weights.config(), Modality::Vision).len();
    let depths: Vec<usize> = match depths {
        Some(d) => d.to_vec(),
        None => (0..=n_stages).collect(),
    };
    if depths.windows(2).any(|p| p[0] >= p[1]) || depths.last().is_some_and(|&d| d > n_stages) {
        return Err(Error::Parameter(format!(
            "depths must ascend within 0..={n_stages}, got {depths:?}"
        )));
    }
    let reference = req.attribute(method, image, tokens)?;

    let per_seed: Vec<Vec<Option<f64>>> = seeds
        .par_iter()
        .map(|&seed| {
            depths
                .iter()
                .map(|&depth| {
                    let w = cascade(req.weights, seed, depth);
                    let r = AttributionRequest {
                        weights: &w,
                        ..*req
                    };
                    let map = r.attribute(method, image, tokens)?;
                    match spearman_rank(reference.data(), map.data()) {
                        Ok(rho) => Ok(Some(rho)),
                        Err(Error::UndefinedCorrelation(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let summaries: Vec<DepthSummary> = depths
        .iter()
        .enumerate()
        .map(|(j, &depth)| {
            let rho: Vec<Option<f64>> = per_seed.iter().map(|r| r[j]).collect();
            let defined: Vec<f64> = rho.iter().flatten().map(|r| r.abs()).collect();
            DepthSummary {
                depth,
                median_abs_rho: median(defined),
                undefined: rho.iter().filter(|r| r.is_none()).count(),
                rho,
            }
        })
        .collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) = summaries
        .iter()
        .filter_map(|d| d.median_abs_rho.map(|m| (d.depth as f64, m)))
        .unzip();
    let trend = spearman_rank(&xs, &ys).ok();
    Ok(SanityReport {
        method,
        seeds: seeds.to_vec(),
        depths: summaries,
        trend,
    })
}
