//! Closed-form scoring model with a planted set of informative units.
//!
//! The score is a single pooled attention readout over the kept units:
//! `c(kept) = bias + sum_{i kept} s_i * <u, v_i>`, where `s` are query-key
//! softmax weights, `v_i` value vectors and `u` the readout direction. Units in
//! the planted set carry a strong component along `u`. Because the readout
//! is linear in the attention output, `u` is exactly the gradient the
//! attribution formula contracts against the values.

use super::scorer::MaskScorer;
use crate::attrib::{grad_eclip_scores, AttributionMap, Provenance};
use crate::error::{Error, Result};
use crate::math::softmax_temp;
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

const FEATURE_DIM: usize = 8;
const NOISE: f64 = 0.3;
const SIGNAL: f64 = 2.0;
const BIAS: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct PlantedModel {
    /// Grid side for image-like models; `None` for token sequences.
    side: Option<usize>,
    planted: Vec<usize>,
    values: Tensor,
    readout: Vec<f64>,
    sims: Vec<f64>,
    bias: f64,
}

impl PlantedModel {
    /// `side x side` patch grid with `n_planted` informative patches.
    pub fn grid(seed: u64, side: usize, n_planted: usize) -> Result<Self> {
        Self::build(seed, side * side, n_planted, Some(side), false)
    }

    /// `n` content tokens whose contributions are all positive.
    pub fn tokens(seed: u64, n: usize, n_planted: usize) -> Result<Self> {
        Self::build(seed, n, n_planted, None, true)
    }

    fn build(
        seed: u64,
        n: usize,
        n_planted: usize,
        side: Option<usize>,
        positive: bool,
    ) -> Result<Self> {
        if n == 0 || n_planted > n {
            return Err(Error::Parameter(format!(
                "{n_planted} planted among {n} units"
            )));
        }
        let mut rng = Rng::new(derive_seed(seed, 0x91a7));
        let raw: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gaussian()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let readout: Vec<f64> = raw.iter().map(|v| v / norm).collect();

        // Partial Fisher-Yates picks the planted set.
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..n_planted {
            let j = i + (rng.next_u64() % (n - i) as u64) as usize;
            order.swap(i, j);
        }
        let mut planted = order[..n_planted].to_vec();
        planted.sort_unstable();

        let mut values = Vec::with_capacity(n * FEATURE_DIM);
        for i in 0..n {
            let mut v: Vec<f64> = (0..FEATURE_DIM).map(|_| NOISE * rng.gaussian()).collect();
            let along: f64 = v.iter().zip(&readout).map(|(a, b)| a * b).sum();
            if positive && along < 0.0 {
                v.iter_mut()
                    .zip(&readout)
                    .for_each(|(x, u)| *x -= 2.0 * along * u);
            }
            if planted.binary_search(&i).is_ok() {
                v.iter_mut()
                    .zip(&readout)
                    .for_each(|(x, u)| *x += SIGNAL * u);
            }
            values.extend(v);
        }
        let query: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gaussian()).collect();
        let logits: Vec<f64> = (0..n)
            .map(|_| {
                let key: Vec<f64> = (0..FEATURE_DIM).map(|_| 0.5 * rng.gaussian()).collect();
                key.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>()
                    / (FEATURE_DIM as f64).sqrt()
            })
            .collect();
        let sims = softmax_temp(&logits, 1.0)?;
        Ok(Self {
            side,
            planted,
            values: Tensor::matrix(n, FEATURE_DIM, values)?,
            readout,
            sims,
            bias: BIAS,
        })
    }

    pub fn planted(&self) -> &[usize] {
        &self.planted
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Signed contribution of each unit to the score.
    pub fn contributions(&self) -> Vec<f64> {
        (0..self.values.rows())
            .map(|i| {
                let uv: f64 = self
                    .readout
                    .iter()
                    .zip(self.values.row(i))
                    .map(|(a, b)| a * b)
                    .sum();
                self.sims[i] * uv
            })
            .collect()
    }

    /// Attribution formula applied to the model's own readout gradient,
    /// values and query-key weights.
    pub fn attribution(&self) -> Result<AttributionMap> {
        let scores = grad_eclip_scores(&self.readout, &self.values, &self.sims)?;
        match self.side {
            Some(side) => {
                AttributionMap::grid(Tensor::matrix(side, side, scores)?, Provenance::GradEclip)
            }
            None => {
                let n = scores.len();
                AttributionMap::tokens(scores, vec![true; n], Provenance::GradEclip)
            }
        }
    }
}

impl MaskScorer for PlantedModel {
    fn units(&self) -> usize {
        self.values.rows()
    }

    fn score(&self, kept: &[bool]) -> Result<f64> {
        if kept.len() != self.units() {
            return Err(Error::Dimension(format!(
                "mask of {} units for {}",
                kept.len(),
                self.units()
            )));
        }
        Ok(self.bias
            + self
                .contributions()
                .iter()
                .zip(kept)
                .filter(|(_, &k)| k)
                .map(|(c, _)| c)
                .sum::<f64>())
    }
}
