//! Baseline gradient attribution: for every block, the pooled-token gradient
//! row is contracted against each token's value vector, weighted by the
//! pooled query's attention to that token, rectified and summed over blocks.

use super::backprop::{LayerGradients, Objective};
use super::finite_diff::objective_value;
use super::map::{AttributionMap, Provenance};
use crate::error::{Error, Result};
use crate::math::{relu, softmax_temp};
use crate::model::{EncoderActivations, Modality, Weights};
use crate::tensor::Tensor;

/// Head-averaged softmax attention of the pooled query over all tokens it may
/// attend to (positions after it get zero under a causal mask).
fn pooled_query_weights(
    acts: &EncoderActivations,
    layer: usize,
    n_heads: usize,
) -> Result<Vec<f64>> {
    let rec = acts
        .layers
        .get(layer)
        .ok_or_else(|| Error::Parameter(format!("layer {layer} out of range")))?;
    let (n, d) = (rec.q.rows(), rec.q.cols());
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Parameter(format!(
            "{n_heads} heads do not divide {d}"
        )));
    }
    let dh = d / n_heads;
    let pooled = acts.pooled_index;
    let visible = if acts.causal { pooled + 1 } else { n };
    let scale = 1.0 / (dh as f64).sqrt();
    let mut avg = vec![0.0; n];
    for h in 0..n_heads {
        let off = h * dh;
        let q = &rec.q.row(pooled)[off..off + dh];
        let logits: Vec<f64> = (0..visible)
            .map(|j| {
                let k = &rec.k.row(j)[off..off + dh];
                q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
            })
            .collect();
        for (a, p) in avg.iter_mut().zip(softmax_temp(&logits, 1.0)?) {
            *a += p / n_heads as f64;
        }
    }
    Ok(avg)
}

/// Query-key similarity of the class token over spatial tokens, renormalized
/// to sum to one once the class position is dropped.
pub fn qk_similarity(acts: &EncoderActivations, layer: usize, n_heads: usize) -> Result<Vec<f64>> {
    if acts.modality != Modality::Vision {
        return Err(Error::Consistency(
            "qk_similarity expects vision activations".into(),
        ));
    }
    let w = pooled_query_weights(acts, layer, n_heads)?;
    let spatial = &w[1..];
    let total: f64 = spatial.iter().sum();
    Ok(spatial.iter().map(|v| v / total).collect())
}

/// `ReLU((g · v_i) * s_i)` for each token `i`, where `g` is the pooled
/// gradient row and `s` the query-key weights aligned with `values`' rows.
pub fn grad_eclip_scores(grad_row: &[f64], values: &Tensor, sims: &[f64]) -> Result<Vec<f64>> {
    if values.rows() != sims.len() || values.cols() != grad_row.len() {
        return Err(Error::Dimension(format!(
            "values {:?}, {} weights, gradient width {}",
            values.shape(),
            sims.len(),
            grad_row.len()
        )));
    }
    Ok(sims
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let gv: f64 = grad_row.iter().zip(values.row(i)).map(|(g, v)| g * v).sum();
            relu(gv * s)
        })
        .collect())
}

fn check_pair(acts: &EncoderActivations, grads: &LayerGradients, modality: Modality) -> Result<()> {
    if acts.modality != modality || grads.modality != modality {
        return Err(Error::Consistency(format!(
            "expected {modality:?} activations and gradients, got {:?} and {:?}",
            acts.modality, grads.modality
        )));
    }
    if acts.layers.len() != grads.layers.len() {
        return Err(Error::Consistency("layer counts differ".into()));
    }
    Ok(())
}

fn n_heads_of(acts: &EncoderActivations) -> usize {
    acts.layers[0].attn_probs.len()
}

/// Per-block baseline contributions over spatial tokens, before summation.
pub fn grad_eclip_layers(
    acts: &EncoderActivations,
    grads: &LayerGradients,
) -> Result<Vec<Vec<f64>>> {
    check_pair(acts, grads, Modality::Vision)?;
    let heads = n_heads_of(acts);
    let n = acts.n_tokens();
    (0..acts.layers.len())
        .map(|l| {
            let sims = qk_similarity(acts, l, heads)?;
            let g = grads.layers[l].row(acts.pooled_index);
            let v = &acts.layers[l].v;
            let spatial = Tensor::from_parts(vec![n - 1, v.cols()], v.data()[v.cols()..].to_vec());
            grad_eclip_scores(g, &spatial, &sims)
        })
        .collect()
}

/// Baseline image attribution on the patch grid.
pub fn grad_eclip_map(acts: &EncoderActivations, grads: &LayerGradients) -> Result<AttributionMap> {
    let per_layer = grad_eclip_layers(acts, grads)?;
    let n = acts.n_tokens() - 1;
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Dimension(format!(
            "{n} spatial tokens do not form a square grid"
        )));
    }
    let mut total = vec![0.0; n];
    for scores in &per_layer {
        for (t, s) in total.iter_mut().zip(scores) {
            *t += s;
        }
    }
    AttributionMap::grid(
        Tensor::from_parts(vec![side, side], total),
        Provenance::GradEclip,
    )
}

/// Baseline text attribution with the EOS query. BOS, EOS and every position
/// after EOS score zero.
pub fn grad_eclip_text(
    acts: &EncoderActivations,
    grads: &LayerGradients,
) -> Result<AttributionMap> {
    check_pair(acts, grads, Modality::Text)?;
    let heads = n_heads_of(acts);
    let n = acts.n_tokens();
    let eos = acts.pooled_index;
    let mask: Vec<bool> = (0..n).map(|i| i > 0 && i < eos).collect();
    let mut total = vec![0.0; n];
    for l in 0..acts.layers.len() {
        let sims = pooled_query_weights(acts, l, heads)?;
        let scores = grad_eclip_scores(grads.layers[l].row(eos), &acts.layers[l].v, &sims)?;
        for ((t, s), m) in total.iter_mut().zip(scores).zip(&mask) {
            if *m {
                *t += s;
            }
        }
    }
    AttributionMap::tokens(total, mask, Provenance::GradEclip)
}

/// Blend of the class-token similarity with the mean similarity of the
/// projected spatial tokens.
pub fn combined_similarity(
    w: &Weights,
    acts_v: &EncoderActivations,
    e_txt: &[f64],
    lambda: f64,
) -> Result<f64> {
    if acts_v.modality != Modality::Vision {
        return Err(Error::Consistency(
            "combined similarity needs vision activations".into(),
        ));
    }
    let objective = Objective::combined(lambda)?;
    objective_value(
        w,
        Modality::Vision,
        acts_v.final_hidden(),
        &acts_v.embedding,
        e_txt,
        objective,
    )
}

/// Same blend from precomputed unit embeddings.
pub fn blend_similarity(
    c_cls: f64,
    patch_embeddings: &[Vec<f64>],
    e_txt: &[f64],
    lambda: f64,
) -> Result<f64> {
    Objective::combined(lambda)?;
    if lambda == 0.0 {
        return Ok(c_cls);
    }
    if patch_embeddings.is_empty() {
        return Err(Error::Dimension("no patch embeddings".into()));
    }
    let mean = patch_embeddings
        .iter()
        .map(|e| e.iter().zip(e_txt).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / patch_embeddings.len() as f64;
    Ok((1.0 - lambda) * c_cls + lambda * mean)
}
