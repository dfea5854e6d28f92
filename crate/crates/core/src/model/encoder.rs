//! Forward passes of both towers with a full activation record.
//!
//! Blocks are pre-LN: `u = h + attn(LN1 h)`, `h' = u + mlp(LN2 u)`. Row vectors
//! multiply weight matrices from the left (`x · W + b`). The vision tower pools
//! the class token (index 0); the text tower is causally masked and pools the
//! EOS position.

use super::config::{Modality, ModelConfig};
use super::preprocess::patchify;
use super::tokenizer::Tokens;
use super::weights::{layer_prefix, Weights};
use crate::error::{Error, Result};
use crate::math::{self, gelu_tanh, linear, matmul, normalize_row};
use crate::tensor::Tensor;

/// Standardized rows and their `1/sqrt(var + eps)` factors.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Everything one block computed.
#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub input: Tensor,
    pub ln1: NormCache,
    pub ln1_out: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Per-head attention probabilities, each `n x n`.
    pub attn_probs: Vec<Tensor>,
    /// Concatenated head outputs before the output projection.
    pub context: Tensor,
    /// Attention sublayer output after `W_o`, before the residual add.
    pub attn_out: Tensor,
    pub residual: Tensor,
    pub ln2: NormCache,
    pub ln2_out: Tensor,
    pub mlp_pre: Tensor,
    pub mlp_act: Tensor,
    pub output: Tensor,
}

/// Final LN, projection and normalization of the pooled token.
#[derive(Debug, Clone)]
pub struct HeadRecord {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
    pub normed: Vec<f64>,
    pub projected: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct EncoderActivations {
    pub modality: Modality,
    pub layers: Vec<LayerRecord>,
    pub pooled_index: usize,
    pub causal: bool,
    pub head: HeadRecord,
    /// Unit-norm joint-space embedding.
    pub embedding: Vec<f64>,
}

impl EncoderActivations {
    pub fn n_tokens(&self) -> usize {
        self.layers[0].input.rows()
    }

    pub fn final_hidden(&self) -> &Tensor {
        &self.layers[self.layers.len() - 1].output
    }
}

pub(crate) struct BlockParams<'a> {
    pub ln1_gamma: &'a Tensor,
    pub ln1_beta: &'a Tensor,
    pub w_qkv: &'a Tensor,
    pub b_qkv: &'a Tensor,
    pub w_o: &'a Tensor,
    pub b_o: &'a Tensor,
    pub ln2_gamma: &'a Tensor,
    pub ln2_beta: &'a Tensor,
    pub mlp_w1: &'a Tensor,
    pub mlp_b1: &'a Tensor,
    pub mlp_w2: &'a Tensor,
    pub mlp_b2: &'a Tensor,
}

impl<'a> BlockParams<'a> {
    pub(crate) fn load(w: &'a Weights, modality: Modality, layer: usize) -> Self {
        let p = layer_prefix(modality, layer);
        let g = |s: &str| w.param(&format!("{p}/{s}"));
        Self {
            ln1_gamma: g("ln1_gamma"),
            ln1_beta: g("ln1_beta"),
            w_qkv: g("w_qkv"),
            b_qkv: g("b_qkv"),
            w_o: g("w_o"),
            b_o: g("b_o"),
            ln2_gamma: g("ln2_gamma"),
            ln2_beta: g("ln2_beta"),
            mlp_w1: g("mlp_w1"),
            mlp_b1: g("mlp_b1"),
            mlp_w2: g("mlp_w2"),
            mlp_b2: g("mlp_b2"),
        }
    }
}

pub(crate) fn layer_norm_rows(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> (Tensor, NormCache) {
    let (n, d) = (x.rows(), x.cols());
    let mut xhat = Vec::with_capacity(n * d);
    let mut out = Vec::with_capacity(n * d);
    let mut inv = Vec::with_capacity(n);
    for r in 0..n {
        let (h, s) = normalize_row(x.row(r), eps);
        for (j, v) in h.iter().enumerate() {
            out.push(gamma.data()[j] * v + beta.data()[j]);
        }
        xhat.extend(h);
        inv.push(s);
    }
    (
        Tensor::from_parts(vec![n, d], out),
        NormCache {
            xhat: Tensor::from_parts(vec![n, d], xhat),
            inv_std: inv,
        },
    )
}

/// Softmax attention probabilities of every head.
pub(crate) fn attention_probs(q: &Tensor, k: &Tensor, n_heads: usize, causal: bool) -> Vec<Tensor> {
    let (n, d) = (q.rows(), q.cols());
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    (0..n_heads)
        .map(|h| {
            let off = h * dh;
            let mut p = vec![0.0; n * n];
            for i in 0..n {
                let qi = &q.row(i)[off..off + dh];
                let row = &mut p[i * n..(i + 1) * n];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = if causal && j > i {
                        f64::NEG_INFINITY
                    } else {
                        let kj = &k.row(j)[off..off + dh];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    };
                }
                math::softmax_in_place(row);
            }
            Tensor::from_parts(vec![n, n], p)
        })
        .collect()
}

fn split_qkv(qkv: &Tensor, d: usize) -> (Tensor, Tensor, Tensor) {
    let n = qkv.rows();
    let mut parts = [
        Vec::with_capacity(n * d),
        Vec::with_capacity(n * d),
        Vec::with_capacity(n * d),
    ];
    for r in 0..n {
        let row = qkv.row(r);
        for (p, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&row[p * d..(p + 1) * d]);
        }
    }
    let [q, k, v] = parts;
    (
        Tensor::from_parts(vec![n, d], q),
        Tensor::from_parts(vec![n, d], k),
        Tensor::from_parts(vec![n, d], v),
    )
}

/// One pre-LN block. With `attn_override`, the recorded attention output is
/// replaced by the given tensor before the residual add.
pub(crate) fn block_forward(
    p: &BlockParams,
    h: &Tensor,
    config: &ModelConfig,
    causal: bool,
    attn_override: Option<&Tensor>,
) -> Result<LayerRecord> {
    let d = config.d_model;
    let n_heads = config.n_heads;
    let dh = config.d_head();
    let n = h.rows();
    let (ln1_out, ln1) = layer_norm_rows(h, p.ln1_gamma, p.ln1_beta, config.ln_eps);
    let qkv = linear(&ln1_out, p.w_qkv, p.b_qkv)?;
    let (q, k, v) = split_qkv(&qkv, d);
    let attn_probs = attention_probs(&q, &k, n_heads, causal);
    let mut ctx = vec![0.0; n * d];
    for (hd, probs) in attn_probs.iter().enumerate() {
        let off = hd * dh;
        for i in 0..n {
            let out = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..n {
                let pij = probs.get2(i, j);
                if pij == 0.0 {
                    continue;
                }
                let vj = &v.row(j)[off..off + dh];
                for c in 0..dh {
                    out[c] += pij * vj[c];
                }
            }
        }
    }
    let context = Tensor::from_parts(vec![n, d], ctx);
    let mut attn_out = linear(&context, p.w_o, p.b_o)?;
    if let Some(o) = attn_override {
        if o.shape() != attn_out.shape() {
            return Err(Error::Dimension(format!(
                "attention override {:?} vs {:?}",
                o.shape(),
                attn_out.shape()
            )));
        }
        attn_out = o.clone();
    }
    let mut residual = h.clone();
    for (r, a) in residual.data_mut().iter_mut().zip(attn_out.data()) {
        *r += a;
    }
    let (ln2_out, ln2) = layer_norm_rows(&residual, p.ln2_gamma, p.ln2_beta, config.ln_eps);
    let mlp_pre = linear(&ln2_out, p.mlp_w1, p.mlp_b1)?;
    let mlp_act = mlp_pre.map(gelu_tanh);
    let mlp_out = linear(&mlp_act, p.mlp_w2, p.mlp_b2)?;
    let mut output = residual.clone();
    for (o, m) in output.data_mut().iter_mut().zip(mlp_out.data()) {
        *o += m;
    }
    Ok(LayerRecord {
        input: h.clone(),
        ln1,
        ln1_out,
        q,
        k,
        v,
        attn_probs,
        context,
        attn_out,
        residual,
        ln2,
        ln2_out,
        mlp_pre,
        mlp_act,
        output,
    })
}

/// Final LN of one hidden row, projection and L2 normalization.
pub(crate) fn head_forward(
    w: &Weights,
    modality: Modality,
    hidden: &[f64],
) -> Result<(HeadRecord, Vec<f64>)> {
    let m = modality.prefix();
    let gamma = w.param(&format!("{m}/ln_final_gamma"));
    let beta = w.param(&format!("{m}/ln_final_beta"));
    let proj = w.param(&format!("{m}/proj"));
    let (xhat, inv_std) = normalize_row(hidden, w.config().ln_eps);
    let normed: Vec<f64> = xhat
        .iter()
        .zip(gamma.data().iter().zip(beta.data()))
        .map(|(x, (g, b))| g * x + b)
        .collect();
    let ds = proj.cols();
    let mut projected = vec![0.0; ds];
    math::gemm(&normed, proj.data(), &mut projected, 1, normed.len(), ds);
    let norm = math::l2_norm(&projected);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Normalization { norm });
    }
    let embedding = projected.iter().map(|v| v / norm).collect();
    Ok((
        HeadRecord {
            xhat,
            inv_std,
            normed,
            projected,
            norm,
        },
        embedding,
    ))
}

/// Runs blocks `start..` from hidden state `h`, optionally overriding the
/// attention output of one block, then applies the head.
pub(crate) fn run_layers(
    w: &Weights,
    modality: Modality,
    h: Tensor,
    start: usize,
    causal: bool,
    pooled_index: usize,
    attn_override: Option<(usize, &Tensor)>,
) -> Result<(Vec<LayerRecord>, HeadRecord, Vec<f64>)> {
    let config = w.config();
    let mut layers = Vec::new();
    let mut h = h;
    for l in start..config.n_layers(modality) {
        let p = BlockParams::load(w, modality, l);
        let ov = attn_override.and_then(|(ol, t)| (ol == l).then_some(t));
        let rec = block_forward(&p, &h, config, causal, ov)?;
        h = rec.output.clone();
        layers.push(rec);
    }
    let (head, embedding) = head_forward(w, modality, h.row(pooled_index))?;
    Ok((layers, head, embedding))
}

/// Token embeddings plus positional embeddings for a normalized image.
pub fn vision_input(w: &Weights, image: &Tensor) -> Result<Tensor> {
    let c = w.config();
    if image.shape() != [c.image_size, c.image_size, 3] {
        return Err(Error::Dimension(format!(
            "normalized image must be {0}x{0}x3, got {1:?}",
            c.image_size,
            image.shape()
        )));
    }
    let patches = patchify(image, c.patch_size)?;
    let tokens = matmul(&patches, w.param("vision/patch_embed"))?;
    let d = c.d_model;
    let pos = w.param("vision/pos_embed");
    let mut x = Vec::with_capacity(c.n_tokens_v() * d);
    x.extend_from_slice(w.param("vision/class_token").data());
    x.extend_from_slice(tokens.data());
    for (v, p) in x.iter_mut().zip(pos.data()) {
        *v += p;
    }
    Ok(Tensor::from_parts(vec![c.n_tokens_v(), d], x))
}

pub fn text_input(w: &Weights, tokens: &Tokens) -> Result<Tensor> {
    let c = w.config();
    if tokens.ids.len() != c.max_text_len {
        return Err(Error::Dimension(format!(
            "token sequence length {} != max_text_len {}",
            tokens.ids.len(),
            c.max_text_len
        )));
    }
    if tokens.eos_index >= tokens.ids.len() {
        return Err(Error::Dimension("EOS index out of range".into()));
    }
    let table = w.param("text/token_embed");
    let pos = w.param("text/pos_embed");
    let d = c.d_model;
    let mut x = Vec::with_capacity(c.max_text_len * d);
    for (i, &id) in tokens.ids.iter().enumerate() {
        if id as usize >= c.vocab_size {
            return Err(Error::Vocabulary {
                id,
                vocab_size: c.vocab_size,
            });
        }
        x.extend(
            table
                .row(id as usize)
                .iter()
                .zip(pos.row(i))
                .map(|(a, b)| a + b),
        );
    }
    Ok(Tensor::from_parts(vec![c.max_text_len, d], x))
}

fn encode(
    w: &Weights,
    modality: Modality,
    x: Tensor,
    pooled_index: usize,
) -> Result<EncoderActivations> {
    let causal = modality == Modality::Text;
    let (layers, head, embedding) = run_layers(w, modality, x, 0, causal, pooled_index, None)?;
    Ok(EncoderActivations {
        modality,
        layers,
        pooled_index,
        causal,
        head,
        embedding,
    })
}

/// Encodes a normalized `image_size x image_size x 3` image.
pub fn encode_image(w: &Weights, image: &Tensor) -> Result<(Vec<f64>, EncoderActivations)> {
    let acts = encode(w, Modality::Vision, vision_input(w, image)?, 0)?;
    Ok((acts.embedding.clone(), acts))
}

pub fn encode_text(w: &Weights, tokens: &Tokens) -> Result<(Vec<f64>, EncoderActivations)> {
    let acts = encode(w, Modality::Text, text_input(w, tokens)?, tokens.eos_index)?;
    Ok((acts.embedding.clone(), acts))
}

/// Dot product of two unit vectors.
pub fn similarity(e_img: &[f64], e_txt: &[f64]) -> Result<f64> {
    if e_img.len() != e_txt.len() {
        return Err(Error::Dimension(format!(
            "embedding lengths {} and {}",
            e_img.len(),
            e_txt.len()
        )));
    }
    for e in [e_img, e_txt] {
        let norm = math::l2_norm(e);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Normalization { norm });
        }
    }
    Ok(e_img.iter().zip(e_txt).map(|(a, b)| a * b).sum())
}
