//! Reverse-mode gradients of the image-text score with respect to every
//! block's attention output. Only the paths this method needs are
//! differentiated; the opposite tower's embedding is held constant.

use crate::error::{Error, Result};
use crate::math::{gelu_tanh_grad, matmul_nt};
use crate::model::{
    head_forward, BlockParams, EncoderActivations, LayerRecord, Modality, NormCache, Weights,
};
use crate::tensor::Tensor;

/// The scalar being explained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Cosine similarity of the pooled embeddings.
    Cosine,
    /// `(1 - lambda) * c_cls + lambda * mean_i cos(patch_i, text)` over spatial
    /// tokens. Vision only; `lambda = 0` is identical to [`Objective::Cosine`].
    Combined { lambda: f64 },
}

impl Objective {
    pub fn combined(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(Self::Combined { lambda })
    }

    /// Collapses a zero mixing weight onto the plain cosine path.
    pub(crate) fn normalized(self) -> Self {
        match self {
            Self::Combined { lambda: 0.0 } => Self::Cosine,
            o => o,
        }
    }
}

/// `dc/d attn_out_l` for every block of one tower, ordered bottom-up.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub modality: Modality,
    pub layers: Vec<Tensor>,
}

pub fn backprop_to_attention(
    w: &Weights,
    acts_v: &EncoderActivations,
    acts_t: &EncoderActivations,
    modality: Modality,
) -> Result<LayerGradients> {
    backprop_with_objective(w, acts_v, acts_t, modality, Objective::Cosine)
}

pub(crate) fn check_activations(
    w: &Weights,
    acts: &EncoderActivations,
    modality: Modality,
) -> Result<()> {
    let c = w.config();
    if acts.modality != modality {
        return Err(Error::Consistency(format!(
            "expected {modality:?} activations, got {:?}",
            acts.modality
        )));
    }
    if acts.layers.len() != c.n_layers(modality) {
        return Err(Error::Consistency(format!(
            "{} recorded layers, config has {}",
            acts.layers.len(),
            c.n_layers(modality)
        )));
    }
    let n = c.n_tokens(modality);
    if acts
        .layers
        .iter()
        .any(|l| l.attn_out.shape() != [n, c.d_model] || l.q.shape() != [n, c.d_model])
    {
        return Err(Error::Consistency(
            "activation shapes disagree with config".into(),
        ));
    }
    // The recorded head must reproduce from these weights.
    let (_, e) = head_forward(w, modality, acts.final_hidden().row(acts.pooled_index))?;
    if e != acts.embedding {
        return Err(Error::Consistency(
            "activations were not produced by these weights".into(),
        ));
    }
    Ok(())
}

pub fn backprop_with_objective(
    w: &Weights,
    acts_v: &EncoderActivations,
    acts_t: &EncoderActivations,
    modality: Modality,
    objective: Objective,
) -> Result<LayerGradients> {
    check_activations(w, acts_v, Modality::Vision)?;
    check_activations(w, acts_t, Modality::Text)?;
    let (acts, other) = match modality {
        Modality::Vision => (acts_v, &acts_t.embedding),
        Modality::Text => (acts_t, &acts_v.embedding),
    };
    let seed = output_gradient(w, acts, other, objective)?;
    Ok(LayerGradients {
        modality,
        layers: backprop_blocks(w, acts, seed),
    })
}

/// Gradient of the objective with respect to the last block's output.
pub(crate) fn output_gradient(
    w: &Weights,
    acts: &EncoderActivations,
    other: &[f64],
    objective: Objective,
) -> Result<Tensor> {
    let hidden = acts.final_hidden();
    let mut seed = Tensor::zeros(hidden.shape().to_vec());
    match objective.normalized() {
        Objective::Cosine => {
            let row = head_backward(w, acts.modality, hidden.row(acts.pooled_index), other, 1.0)?;
            seed.row_mut(acts.pooled_index).copy_from_slice(&row);
        }
        Objective::Combined { lambda } => {
            if acts.modality != Modality::Vision {
                return Err(Error::Parameter(
                    "combined similarity is defined for the vision tower only".into(),
                ));
            }
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::Parameter(format!(
                    "lambda must lie in [0, 1], got {lambda}"
                )));
            }
            let cls = head_backward(w, acts.modality, hidden.row(0), other, 1.0 - lambda)?;
            seed.row_mut(0).copy_from_slice(&cls);
            let n_spatial = hidden.rows() - 1;
            let wt = lambda / n_spatial as f64;
            for i in 1..hidden.rows() {
                let g = head_backward(w, acts.modality, hidden.row(i), other, wt)?;
                seed.row_mut(i).copy_from_slice(&g);
            }
        }
    }
    Ok(seed)
}

/// `weight * d cos(head(hidden), other) / d hidden`.
fn head_backward(
    w: &Weights,
    modality: Modality,
    hidden: &[f64],
    other: &[f64],
    weight: f64,
) -> Result<Vec<f64>> {
    let (rec, e) = head_forward(w, modality, hidden)?;
    let m = modality.prefix();
    let gamma = w.param(&format!("{m}/ln_final_gamma"));
    let proj = w.param(&format!("{m}/proj"));
    let dot: f64 = e.iter().zip(other).map(|(a, b)| a * b).sum();
    let dy: Vec<f64> = e
        .iter()
        .zip(other)
        .map(|(ei, oi)| weight * (oi - ei * dot) / rec.norm)
        .collect();
    let d = hidden.len();
    let ds = dy.len();
    let mut dnormed = vec![0.0; d];
    for (j, slot) in dnormed.iter_mut().enumerate() {
        let prow = &proj.data()[j * ds..(j + 1) * ds];
        *slot = prow.iter().zip(&dy).map(|(p, g)| p * g).sum();
    }
    Ok(ln_row_backward(
        &dnormed,
        &rec.xhat,
        rec.inv_std,
        gamma.data(),
    ))
}

fn ln_row_backward(dy: &[f64], xhat: &[f64], inv_std: f64, gamma: &[f64]) -> Vec<f64> {
    let n = dy.len() as f64;
    let dxhat: Vec<f64> = dy.iter().zip(gamma).map(|(a, g)| a * g).collect();
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    dxhat
        .iter()
        .zip(xhat)
        .map(|(g, x)| inv_std * (g - mean_d - x * mean_dx))
        .collect()
}

fn ln_backward(dy: &Tensor, cache: &NormCache, gamma: &Tensor) -> Tensor {
    let (n, d) = (dy.rows(), dy.cols());
    let mut out = Vec::with_capacity(n * d);
    for r in 0..n {
        out.extend(ln_row_backward(
            dy.row(r),
            cache.xhat.row(r),
            cache.inv_std[r],
            gamma.data(),
        ));
    }
    Tensor::from_parts(vec![n, d], out)
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    out
}

/// Walks the blocks top-down from `dc/dh_L`, returning `dc/d attn_out_l`
/// for each block in bottom-up order.
pub(crate) fn backprop_blocks(w: &Weights, acts: &EncoderActivations, seed: Tensor) -> Vec<Tensor> {
    let config = w.config();
    let mut grads = Vec::with_capacity(acts.layers.len());
    let mut g = seed;
    for (l, rec) in acts.layers.iter().enumerate().rev() {
        let p = BlockParams::load(w, acts.modality, l);
        let du = mlp_branch_backward(&p, rec, &g);
        g = add(
            &du,
            &attention_branch_backward(&p, rec, &du, config.n_heads),
        );
        grads.push(du);
    }
    grads.reverse();
    grads
}

/// `dc/du` where `u = h + attn_out` and the block output is `u + mlp(LN2 u)`.
fn mlp_branch_backward(p: &BlockParams, rec: &LayerRecord, g: &Tensor) -> Tensor {
    let mut dact = matmul_nt(g, p.mlp_w2).expect("mlp_w2 shape");
    for (d, x) in dact.data_mut().iter_mut().zip(rec.mlp_pre.data()) {
        *d *= gelu_tanh_grad(*x);
    }
    let dln2 = matmul_nt(&dact, p.mlp_w1).expect("mlp_w1 shape");
    add(g, &ln_backward(&dln2, &rec.ln2, p.ln2_gamma))
}

/// Contribution of the attention branch to `dc/dh` given `dc/d attn_out`.
fn attention_branch_backward(
    p: &BlockParams,
    rec: &LayerRecord,
    dattn: &Tensor,
    n_heads: usize,
) -> Tensor {
    let dctx = matmul_nt(dattn, p.w_o).expect("w_o shape");
    let (n, d) = (rec.q.rows(), rec.q.cols());
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    for (h, probs) in rec.attn_probs.iter().enumerate() {
        let off = h * dh;
        let mut ds = vec![0.0; n * n];
        for i in 0..n {
            let dci = &dctx.row(i)[off..off + dh];
            let mut row_dot = 0.0;
            for j in 0..n {
                let pij = probs.get2(i, j);
                let vj = &rec.v.row(j)[off..off + dh];
                let dp: f64 = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                ds[i * n + j] = dp;
                row_dot += dp * pij;
                for c in 0..dh {
                    dv[j * d + off + c] += pij * dci[c];
                }
            }
            for j in 0..n {
                let pij = probs.get2(i, j);
                ds[i * n + j] = pij * (ds[i * n + j] - row_dot);
            }
        }
        for i in 0..n {
            let qi = &rec.q.row(i)[off..off + dh];
            for j in 0..n {
                let s = ds[i * n + j] * scale;
                if s == 0.0 {
                    continue;
                }
                let kj = &rec.k.row(j)[off..off + dh];
                for c in 0..dh {
                    dq[i * d + off + c] += s * kj[c];
                    dk[j * d + off + c] += s * qi[c];
                }
            }
        }
    }
    let mut dqkv = Vec::with_capacity(n * 3 * d);
    for r in 0..n {
        dqkv.extend_from_slice(&dq[r * d..(r + 1) * d]);
        dqkv.extend_from_slice(&dk[r * d..(r + 1) * d]);
        dqkv.extend_from_slice(&dv[r * d..(r + 1) * d]);
    }
    let dqkv = Tensor::from_parts(vec![n, 3 * d], dqkv);
    let dln1 = matmul_nt(&dqkv, p.w_qkv).expect("w_qkv shape");
    ln_backward(&dln1, &rec.ln1, p.ln1_gamma)
}
