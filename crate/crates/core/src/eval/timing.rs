use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attrib::Objective;
use crate::enhancer::{baseline_pipeline, mmel_pipeline, EnhancerParams};
use crate::error::{Error, Result};
use crate::model::{Tokens, Weights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub repetitions: usize,
    pub baseline_ns: u64,
    pub mmel_ns: u64,
    pub overhead_ratio: f64,
    /// Interquartile range over median, per pipeline.
    pub baseline_spread: f64,
    pub mmel_spread: f64,
}

fn quartiles(v: &mut [u64]) -> (f64, f64, f64) {
    v.sort_unstable();
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] as f64 + (v[hi] as f64 - v[lo] as f64) * (pos - lo as f64)
    };
    (at(0.25), at(0.5), at(0.75))
}

/// Median wall time of the full enhancement pipeline against the baseline.
/// Runs alternate so drift affects both equally; one warm-up run each is
/// discarded.
pub fn timing_overhead(
    w: &Weights,
    p: &EnhancerParams,
    image: &Tensor,
    tokens: &Tokens,
    objective: Objective,
    repetitions: usize,
) -> Result<TimingReport> {
    if repetitions < 10 {
        return Err(Error::Parameter(format!(
            "need at least 10 repetitions, got {repetitions}"
        )));
    }
    baseline_pipeline(w, image, tokens, objective)?;
    mmel_pipeline(w, p, image, tokens, objective)?;
    let mut base = Vec::with_capacity(repetitions);
    let mut mmel = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(baseline_pipeline(w, image, tokens, objective)?);
        base.push(t.elapsed().as_nanos() as u64);
        let t = Instant::now();
        std::hint::black_box(mmel_pipeline(w, p, image, tokens, objective)?);
        mmel.push(t.elapsed().as_nanos() as u64);
    }
    let (b1, bm, b3) = quartiles(&mut base);
    let (m1, mm, m3) = quartiles(&mut mmel);
    Ok(TimingReport {
        repetitions,
        baseline_ns: bm.round() as u64,
        mmel_ns: mm.round() as u64,
        overhead_ratio: mm / bm.max(1.0),
        baseline_spread: (b3 - b1) / bm.max(1.0),
        mmel_spread: (m3 - m1) / mm.max(1.0),
    })
}
