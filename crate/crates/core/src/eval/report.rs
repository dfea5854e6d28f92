use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::confidence::{confidence_drop_increase, confidence_sample, ConfidenceSample};
use super::curves::{perturbation_curve, CurveMode};
use super::scorer::MaskScorer;
use crate::error::{Error, Result};
use crate::method::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub c: f64,
    pub c_keep: f64,
    /// Percent; `None` when the sample is excluded for `c <= 0`.
    pub drop: Option<f64>,
    pub increase: bool,
    pub del_auc: f64,
    pub ins_auc: f64,
}

/// Confidence drop/increase and both curve AUCs for one sample.
pub fn evaluate_sample(
    id: impl Into<String>,
    scorer: &dyn MaskScorer,
    scores: &[f64],
    retain_fraction: f64,
    steps: usize,
) -> Result<SampleRow> {
    let conf = confidence_sample(scorer, scores, retain_fraction)?;
    let del = perturbation_curve(scorer, scores, CurveMode::Deletion, steps)?;
    let ins = perturbation_curve(scorer, scores, CurveMode::Insertion, steps)?;
    Ok(SampleRow {
        id: id.into(),
        c: conf.c,
        c_keep: conf.c_keep,
        drop: conf.drop,
        increase: conf.increase,
        del_auc: del.auc,
        ins_auc: ins.auc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_drop: f64,
    pub increase_pct: f64,
    pub mean_del_auc: f64,
    pub mean_ins_auc: f64,
    pub included: usize,
    pub excluded: usize,
}

impl Aggregates {
    pub fn from_rows(rows: &[SampleRow]) -> Result<Self> {
        let samples: Vec<ConfidenceSample> = rows
            .iter()
            .map(|r| ConfidenceSample {
                c: r.c,
                c_keep: r.c_keep,
                drop: r.drop,
                increase: r.increase,
            })
            .collect();
        let conf = confidence_drop_increase(&samples)?;
        let n = rows.len() as f64;
        Ok(Self {
            mean_drop: conf.mean_drop,
            increase_pct: conf.increase_pct,
            mean_del_auc: rows.iter().map(|r| r.del_auc).sum::<f64>() / n,
            mean_ins_auc: rows.iter().map(|r| r.ins_auc).sum::<f64>() / n,
            included: conf.included,
            excluded: conf.excluded,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub baseline_ns: u64,
    pub mmel_ns: u64,
    pub overhead_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    /// Sorted by sample id.
    pub rows: Vec<SampleRow>,
    pub aggregates: Aggregates,
    pub config: Value,
    pub weights_hash: String,
    pub timing: Option<TimingSummary>,
}

impl EvalReport {
    /// Sorts rows by id so assembly order does not matter.
    pub fn new(
        method: Method,
        mut rows: Vec<SampleRow>,
        config: Value,
        weights_hash: String,
        timing: Option<TimingSummary>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Evaluation("no samples evaluated".into()));
        }
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        if rows.windows(2).any(|p| p[0].id == p[1].id) {
            return Err(Error::Evaluation("duplicate sample id".into()));
        }
        let aggregates = Aggregates::from_rows(&rows)?;
        Ok(Self {
            method,
            rows,
            aggregates,
            config,
            weights_hash,
            timing,
        })
    }

    /// Pretty JSON with keys in sorted order.
    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::to_value(self).map_err(|e| Error::Evaluation(format!("json: {e}")))?;
        let mut s = serde_json::to_string_pretty(&v)
            .map_err(|e| Error::Evaluation(format!("json: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    /// One row per sample. Method, weight hash and the compact config snapshot
    /// are repeated on every row so each line is self-describing.
    pub fn to_csv(&self) -> Result<String> {
        let csv_err = |e: csv::Error| Error::Evaluation(format!("csv: {e}"));
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::Evaluation(format!("json: {e}")))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id",
            "c",
            "c_keep",
            "drop_pct",
            "increase",
            "del_auc",
            "ins_auc",
            "method",
            "weights_hash",
            "config",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.c.to_string(),
                r.c_keep.to_string(),
                r.drop.map(|d| d.to_string()).unwrap_or_default(),
                r.increase.to_string(),
                r.del_auc.to_string(),
                r.ins_auc.to_string(),
                self.method.to_string(),
                self.weights_hash.clone(),
                config.clone(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Evaluation(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))
    }
}
