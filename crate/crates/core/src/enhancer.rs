//! Hierarchical semantic relationship module.
//!
//! For every vision block and every scale, the spatial query tokens are scaled,
//! passed through `LN(W2 · relu(W1 · x + b1) + b2)`, L2-normalized per token
//! and turned into a temperature softmax over their scaled Gram matrix,
//! weighted by `softplus(theta_l)`. The attention each token receives is
//! averaged over blocks and summed over scales into a field `z`, and the
//! baseline map is multiplied by `1 + alpha * sigmoid(z)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attrib::{
    backprop_with_objective, grad_eclip_map, AttributionMap, Objective, Provenance,
};
use crate::error::{Error, Result};
use crate::math::{self, linear, minmax_gamma, relu, sigmoid, softplus};
use crate::model::{
    encode_image, encode_text, layer_norm_rows, EncoderActivations, Modality, ModelConfig, Tokens,
    Weights,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_SCALES: [f64; 3] = [1.0, 0.75, 0.5];
pub const TRANSFORM_LN_EPS: f64 = 1e-5;

/// Scalar hyperparameters, stored as JSON in the weight-file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancerScalars {
    pub alpha: f64,
    pub temperature: f64,
    pub beta: f64,
    pub scales: Vec<f64>,
}

impl Default for EnhancerScalars {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            temperature: 0.1,
            beta: 2.0,
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

impl EnhancerScalars {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Parameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Parameter(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return Err(Error::Parameter(format!(
                "beta must be >= 1, got {}",
                self.beta
            )));
        }
        check_scales(&self.scales)
    }
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Parameter("scale set is empty".into()));
    }
    if let Some(s) = scales.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::Parameter(format!("scale {s} outside (0, 1]")));
    }
    Ok(())
}

/// Hyperparameters plus the feature-transform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerParams {
    pub alpha: f64,
    pub temperature: f64,
    pub beta: f64,
    pub scales: Vec<f64>,
    /// Pre-softplus weight of each vision block.
    pub theta: Vec<f64>,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
}

const TENSOR_NAMES: [&str; 7] = [
    "enhancer/w1",
    "enhancer/b1",
    "enhancer/w2",
    "enhancer/b2",
    "enhancer/ln_gamma",
    "enhancer/ln_beta",
    "enhancer/theta",
];

impl EnhancerParams {
    /// Default scalars, `theta = 1` for every block, transform weights drawn
    /// like the encoder's (Gaussian, std 0.02) from a stream derived from `seed`.
    pub fn generate(config: &ModelConfig, seed: u64) -> Self {
        let d = config.d_model;
        let mut rng = Rng::new(derive_seed(seed, 0xe4_4a4c));
        let mut gauss = |shape: Vec<usize>| {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| crate::model::INIT_STD * rng.gaussian())
                .collect();
            Tensor::from_parts(shape, data)
        };
        let w1 = gauss(vec![d, 2 * d]);
        let b1 = gauss(vec![2 * d]);
        let w2 = gauss(vec![2 * d, d]);
        let b2 = gauss(vec![d]);
        let s = EnhancerScalars::default();
        Self {
            alpha: s.alpha,
            temperature: s.temperature,
            beta: s.beta,
            scales: s.scales,
            theta: vec![1.0; config.n_layers_v],
            w1,
            b1,
            w2,
            b2,
            ln_gamma: Tensor::full(vec![d], 1.0),
            ln_beta: Tensor::zeros(vec![d]),
        }
    }

    pub fn scalars(&self) -> EnhancerScalars {
        EnhancerScalars {
            alpha: self.alpha,
            temperature: self.temperature,
            beta: self.beta,
            scales: self.scales.clone(),
        }
    }

    pub fn with_scalars(mut self, s: &EnhancerScalars) -> Result<Self> {
        s.validate()?;
        self.alpha = s.alpha;
        self.temperature = s.temperature;
        self.beta = s.beta;
        self.scales = s.scales.clone();
        Ok(self)
    }

    /// Tensors in file order, `theta` last.
    pub fn named_tensors(&self) -> Vec<(&'static str, Tensor)> {
        let theta = Tensor::from_parts(vec![self.theta.len()], self.theta.clone());
        TENSOR_NAMES
            .iter()
            .copied()
            .zip([
                self.w1.clone(),
                self.b1.clone(),
                self.w2.clone(),
                self.b2.clone(),
                self.ln_gamma.clone(),
                self.ln_beta.clone(),
                theta,
            ])
            .collect()
    }

    pub fn from_parts(
        scalars: EnhancerScalars,
        mut tensors: BTreeMap<String, Tensor>,
        config: &ModelConfig,
    ) -> Result<Self> {
        scalars.validate()?;
        let d = config.d_model;
        let shapes: [Vec<usize>; 7] = [
            vec![d, 2 * d],
            vec![2 * d],
            vec![2 * d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![config.n_layers_v],
        ];
        let mut take = |i: usize| -> Result<Tensor> {
            let name = TENSOR_NAMES[i];
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::Consistency(format!("missing tensor {name}")))?;
            if t.shape() != shapes[i].as_slice() {
                return Err(Error::Consistency(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shapes[i]
                )));
            }
            Ok(t)
        };
        let params = Self {
            w1: take(0)?,
            b1: take(1)?,
            w2: take(2)?,
            b2: take(3)?,
            ln_gamma: take(4)?,
            ln_beta: take(5)?,
            theta: take(6)?.into_data(),
            alpha: scalars.alpha,
            temperature: scalars.temperature,
            beta: scalars.beta,
            scales: scalars.scales,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Consistency(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.scalars().validate()?;
        if self.theta.len() != config.n_layers_v {
            return Err(Error::Parameter(format!(
                "{} layer weights for {} vision blocks",
                self.theta.len(),
                config.n_layers_v
            )));
        }
        if self.w1.shape() != [config.d_model, 2 * config.d_model] {
            return Err(Error::Dimension(format!(
                "transform expects width {}, W1 is {:?}",
                config.d_model,
                self.w1.shape()
            )));
        }
        Ok(())
    }
}

/// Drops the class token and lays the remaining tokens out on an
/// `H_p x W_p x d` grid, row-major.
pub fn extract_spatial_tokens(q: &Tensor) -> Result<Tensor> {
    if q.ndim() != 2 || q.rows() < 2 {
        return Err(Error::Dimension(format!(
            "expected n_tokens x d, got {:?}",
            q.shape()
        )));
    }
    let n = q.rows() - 1;
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Dimension(format!(
            "{} tokens is not a square grid plus a class token",
            q.rows()
        )));
    }
    let d = q.cols();
    Tensor::new(vec![side, side, d], q.data()[d..].to_vec())
}

/// One copy of the grid per scale with every feature multiplied by the scale.
pub fn multi_scale_views(grid: &Tensor, scales: &[f64]) -> Result<Vec<(f64, Tensor)>> {
    check_scales(scales)?;
    Ok(scales.iter().map(|&s| (s, grid.scale(s))).collect())
}

fn as_token_matrix(x: &Tensor) -> Result<Tensor> {
    let d = x.cols();
    x.clone().reshape(vec![x.len() / d, d])
}

/// `LN(W2 · relu(W1 · x + b1) + b2)` applied to every token; keeps the
/// input's shape.
pub fn feature_transform(p: &EnhancerParams, grid: &Tensor) -> Result<Tensor> {
    let d = grid.cols();
    if p.w1.rows() != d {
        return Err(Error::Dimension(format!(
            "token width {d} does not match transform input {}",
            p.w1.rows()
        )));
    }
    let x = as_token_matrix(grid)?;
    let hidden = linear(&x, &p.w1, &p.b1)?.map(relu);
    let y = linear(&hidden, &p.w2, &p.b2)?;
    let (out, _) = layer_norm_rows(&y, &p.ln_gamma, &p.ln_beta, TRANSFORM_LN_EPS);
    out.reshape(grid.shape().to_vec())
}

/// Scaled Gram matrix `F F^T / sqrt(d)` of the L2-normalized token features.
pub fn semantic_affinity(features: &Tensor) -> Result<Tensor> {
    let x = as_token_matrix(features)?;
    let (n, d) = (x.rows(), x.cols());
    let mut f = x.clone();
    for r in 0..n {
        let norm = math::l2_norm(f.row(r));
        if !(norm > 0.0) {
            return Err(Error::Normalization { norm });
        }
        f.row_mut(r).iter_mut().for_each(|v| *v /= norm);
    }
    let scale = 1.0 / (d as f64).sqrt();
    Ok(math::matmul_nt(&f, &f)?.scale(scale))
}

/// Row-softmax of the affinity at `temperature`, multiplied by `softplus(theta)`.
pub fn semantic_attention(features: &Tensor, theta: f64, temperature: f64) -> Result<Tensor> {
    let a = semantic_affinity(features)?;
    let n = a.rows();
    let w = softplus(theta);
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        out.extend(
            math::softmax_temp(a.row(r), temperature)?
                .into_iter()
                .map(|p| w * p),
        );
    }
    Tensor::matrix(n, n, out)
}

/// Column means of each block's weighted attention, averaged over blocks and
/// summed over scales. `maps[s][l]` is the map for scale `s`, block `l`.
pub fn aggregate_importance(maps: &[Vec<Tensor>], n_layers: usize) -> Result<Vec<f64>> {
    let n = maps
        .first()
        .and_then(|m| m.first())
        .map(Tensor::rows)
        .ok_or_else(|| Error::Dimension("no attention maps".into()))?;
    let mut z = vec![0.0; n];
    for per_scale in maps {
        if per_scale.len() != n_layers {
            return Err(Error::Dimension(format!(
                "{} maps for {n_layers} layers",
                per_scale.len()
            )));
        }
        let mut imp = vec![0.0; n];
        for a in per_scale {
            if a.shape() != [n, n] {
                return Err(Error::Dimension(format!(
                    "map of shape {:?} among {n}x{n} maps",
                    a.shape()
                )));
            }
            let mut received = vec![0.0; n];
            for j in 0..n {
                for (r, v) in received.iter_mut().zip(a.row(j)) {
                    *r += v;
                }
            }
            for (i, r) in received.iter().enumerate() {
                imp[i] += r / n as f64;
            }
        }
        for (zi, v) in z.iter_mut().zip(&imp) {
            *zi += v / n_layers as f64;
        }
    }
    Ok(z)
}

/// Every (scale, block) attention map over the spatial query tokens.
pub fn semantic_maps(p: &EnhancerParams, acts: &EncoderActivations) -> Result<Vec<Vec<Tensor>>> {
    if acts.modality != Modality::Vision {
        return Err(Error::Consistency(
            "semantic maps need vision activations".into(),
        ));
    }
    if p.theta.len() != acts.layers.len() {
        return Err(Error::Parameter(format!(
            "{} layer weights for {} blocks",
            p.theta.len(),
            acts.layers.len()
        )));
    }
    let grids = acts
        .layers
        .iter()
        .map(|l| extract_spatial_tokens(&l.q))
        .collect::<Result<Vec<_>>>()?;
    let mut maps = Vec::with_capacity(p.scales.len());
    for &s in &p.scales {
        let mut per_layer = Vec::with_capacity(grids.len());
        for (grid, &theta) in grids.iter().zip(&p.theta) {
            let view = grid.scale(s);
            let feats = feature_transform(p, &view)?;
            per_layer.push(semantic_attention(&feats, theta, p.temperature)?);
        }
        maps.push(per_layer);
    }
    Ok(maps)
}

/// `E_base * (1 + alpha * sigmoid(z))`, pointwise.
pub fn enhance_map(base: &AttributionMap, z: &[f64], alpha: f64) -> Result<AttributionMap> {
    if z.len() != base.len() {
        return Err(Error::Dimension(format!(
            "importance field has {} entries, map has {}",
            z.len(),
            base.len()
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let data = base
        .data()
        .iter()
        .zip(z)
        .map(|(e, zi)| e * (1.0 + alpha * sigmoid(*zi)))
        .collect();
    base.with_values(
        Tensor::new(base.values().shape().to_vec(), data)?,
        Provenance::Mmel,
    )
}

/// Visualization map in `[0, 1]`.
pub fn contrast_enhance(map: &AttributionMap, beta: f64) -> Result<Tensor> {
    minmax_gamma(map.values(), beta)
}

#[derive(Debug, Clone)]
pub struct MmelOutput {
    pub similarity: f64,
    pub base: AttributionMap,
    pub enhanced: AttributionMap,
    pub visual: Tensor,
    pub importance: Vec<f64>,
}

/// Encoder activations, embeddings and the baseline map for one pair.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub similarity: f64,
    pub acts_v: EncoderActivations,
    pub acts_t: EncoderActivations,
    pub base: AttributionMap,
}

/// Encode both towers, backpropagate the objective to the vision attention
/// outputs and build the baseline map.
pub fn baseline_pipeline(
    w: &Weights,
    image: &Tensor,
    tokens: &Tokens,
    objective: Objective,
) -> Result<BaselineOutput> {
    let (e_img, acts_v) = encode_image(w, image)?;
    let (e_txt, acts_t) = encode_text(w, tokens)?;
    let similarity = crate::model::similarity(&e_img, &e_txt)?;
    let grads = backprop_with_objective(w, &acts_v, &acts_t, Modality::Vision, objective)?;
    let base = grad_eclip_map(&acts_v, &grads)?;
    Ok(BaselineOutput {
        similarity,
        acts_v,
        acts_t,
        base,
    })
}

/// Baseline map, semantic importance field, enhanced map and its
/// contrast-enhanced visualization.
pub fn mmel_pipeline(
    w: &Weights,
    p: &EnhancerParams,
    image: &Tensor,
    tokens: &Tokens,
    objective: Objective,
) -> Result<MmelOutput> {
    p.validate(w.config())?;
    let b = baseline_pipeline(w, image, tokens, objective)?;
    let maps = semantic_maps(p, &b.acts_v)?;
    let importance = aggregate_importance(&maps, b.acts_v.layers.len())?;
    let enhanced = enhance_map(&b.base, &importance, p.alpha)?;
    let visual = contrast_enhance(&enhanced, p.beta)?;
    Ok(MmelOutput {
        similarity: b.similarity,
        base: b.base,
        enhanced,
        visual,
        importance,
    })
}
