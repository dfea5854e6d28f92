//! Central-difference oracle for the attention-output gradients. Each probe
//! re-runs the tower from the perturbed block upwards.

use rayon::prelude::*;

use super::backprop::Objective;
use crate::error::{Error, Result};
use crate::model::{
    encode_image, encode_text, head_forward, run_layers, EncoderActivations, Modality, Tokens,
    Weights,
};
use crate::tensor::Tensor;

/// Objective value from a final hidden state.
pub(crate) fn objective_value(
    w: &Weights,
    modality: Modality,
    hidden: &Tensor,
    pooled_embedding: &[f64],
    other: &[f64],
    objective: Objective,
) -> Result<f64> {
    let cos = |e: &[f64]| e.iter().zip(other).map(|(a, b)| a * b).sum::<f64>();
    let c = cos(pooled_embedding);
    match objective.normalized() {
        Objective::Cosine => Ok(c),
        Objective::Combined { lambda } => {
            if modality != Modality::Vision {
                return Err(Error::Parameter(
                    "combined similarity is defined for the vision tower only".into(),
                ));
            }
            let mut patch = 0.0;
            for i in 1..hidden.rows() {
                let (_, e) = head_forward(w, modality, hidden.row(i))?;
                patch += cos(&e);
            }
            Ok((1.0 - lambda) * c + lambda * patch / (hidden.rows() - 1) as f64)
        }
    }
}

/// Holds encoded activations and evaluates the objective with one block's
/// attention output replaced.
pub struct SimilarityProbe<'a> {
    weights: &'a Weights,
    modality: Modality,
    objective: Objective,
    acts: EncoderActivations,
    other: Vec<f64>,
}

impl<'a> SimilarityProbe<'a> {
    pub fn new(
        weights: &'a Weights,
        image: &Tensor,
        tokens: &Tokens,
        modality: Modality,
        objective: Objective,
    ) -> Result<Self> {
        let (e_img, acts_v) = encode_image(weights, image)?;
        let (e_txt, acts_t) = encode_text(weights, tokens)?;
        let (acts, other) = match modality {
            Modality::Vision => (acts_v, e_txt),
            Modality::Text => (acts_t, e_img),
        };
        Ok(Self {
            weights,
            modality,
            objective,
            acts,
            other,
        })
    }

    pub fn activations(&self) -> &EncoderActivations {
        &self.acts
    }

    pub fn baseline(&self) -> Result<f64> {
        objective_value(
            self.weights,
            self.modality,
            self.acts.final_hidden(),
            &self.acts.embedding,
            &self.other,
            self.objective,
        )
    }

    /// Objective with `attn_out` of `layer` replaced.
    pub fn eval_with(&self, layer: usize, attn_out: &Tensor) -> Result<f64> {
        let rec = self
            .acts
            .layers
            .get(layer)
            .ok_or_else(|| Error::Parameter(format!("layer {layer} out of range")))?;
        let (layers, _, embedding) = run_layers(
            self.weights,
            self.modality,
            rec.input.clone(),
            layer,
            self.acts.causal,
            self.acts.pooled_index,
            Some((layer, attn_out)),
        )?;
        let hidden = &layers[layers.len() - 1].output;
        objective_value(
            self.weights,
            self.modality,
            hidden,
            &embedding,
            &self.other,
            self.objective,
        )
    }

    /// Central differences over every coordinate of `attn_out` at `layer`.
    pub fn gradient(&self, layer: usize, h: f64) -> Result<Tensor> {
        if !(h > 0.0) {
            return Err(Error::Parameter(format!("step must be positive, got {h}")));
        }
        let base = &self
            .acts
            .layers
            .get(layer)
            .ok_or_else(|| Error::Parameter(format!("layer {layer} out of range")))?
            .attn_out;
        let grads: Vec<f64> = (0..base.len())
            .into_par_iter()
            .map(|idx| {
                let mut plus = base.clone();
                plus.data_mut()[idx] += h;
                let mut minus = base.clone();
                minus.data_mut()[idx] -= h;
                Ok((self.eval_with(layer, &plus)? - self.eval_with(layer, &minus)?) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        Tensor::new(base.shape().to_vec(), grads)
    }
}

/// Finite-difference estimate of `dc/d attn_out_layer` for one tower.
pub fn finite_diff_similarity(
    w: &Weights,
    image: &Tensor,
    tokens: &Tokens,
    modality: Modality,
    layer: usize,
    h: f64,
) -> Result<Tensor> {
    SimilarityProbe::new(w, image, tokens, modality, Objective::Cosine)?.gradient(layer, h)
}
