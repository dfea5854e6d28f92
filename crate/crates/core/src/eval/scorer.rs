//! Models that score a subset of kept units (patches or content tokens).

use super::masking::fill_patches;
use crate::error::{Error, Result};
use crate::model::{encode_image, encode_text, similarity, Tokens, Weights, PAD};
use crate::tensor::Tensor;

pub trait MaskScorer: Sync {
    /// Number of maskable units.
    fn units(&self) -> usize;

    /// Score with `kept[i] == false` units removed.
    fn score(&self, kept: &[bool]) -> Result<f64>;

    fn unperturbed(&self) -> Result<f64> {
        self.score(&vec![true; self.units()])
    }
}

fn check_len(kept: &[bool], n: usize) -> Result<()> {
    if kept.len() != n {
        return Err(Error::Dimension(format!(
            "mask of {} units for {n}",
            kept.len()
        )));
    }
    Ok(())
}

/// Image-text similarity with removed patches set to a fill value.
pub struct ImageScorer<'a> {
    weights: &'a Weights,
    image: Tensor,
    e_txt: Vec<f64>,
    fill: f64,
}

impl<'a> ImageScorer<'a> {
    pub fn new(weights: &'a Weights, image: &Tensor, tokens: &Tokens, fill: f64) -> Result<Self> {
        let (e_txt, _) = encode_text(weights, tokens)?;
        Ok(Self {
            weights,
            image: image.clone(),
            e_txt,
            fill,
        })
    }

    pub fn masked_image(&self, kept: &[bool]) -> Result<Tensor> {
        check_len(kept, self.units())?;
        let removed: Vec<bool> = kept.iter().map(|k| !k).collect();
        fill_patches(&self.image, &removed, self.fill)
    }
}

impl MaskScorer for ImageScorer<'_> {
    fn units(&self) -> usize {
        self.weights.config().n_patches()
    }

    fn score(&self, kept: &[bool]) -> Result<f64> {
        let img = self.masked_image(kept)?;
        let (e_img, _) = encode_image(self.weights, &img)?;
        similarity(&e_img, &self.e_txt)
    }
}

/// Image-text similarity with removed content tokens replaced by PAD. BOS and
/// EOS are never touched.
pub struct TextScorer<'a> {
    weights: &'a Weights,
    tokens: Tokens,
    positions: Vec<usize>,
    e_img: Vec<f64>,
}

impl<'a> TextScorer<'a> {
    pub fn new(weights: &'a Weights, image: &Tensor, tokens: &Tokens) -> Result<Self> {
        let positions = tokens.content_positions();
        if positions.is_empty() {
            return Err(Error::Evaluation("text has no content tokens".into()));
        }
        let (e_img, _) = encode_image(weights, image)?;
        Ok(Self {
            weights,
            tokens: tokens.clone(),
            positions,
            e_img,
        })
    }

    /// Sequence positions of the maskable units.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn masked_tokens(&self, kept: &[bool]) -> Result<Tokens> {
        check_len(kept, self.positions.len())?;
        let mut t = self.tokens.clone();
        for (&pos, &k) in self.positions.iter().zip(kept) {
            if !k {
                t.ids[pos] = PAD;
            }
        }
        Ok(t)
    }
}

impl MaskScorer for TextScorer<'_> {
    fn units(&self) -> usize {
        self.positions.len()
    }

    fn score(&self, kept: &[bool]) -> Result<f64> {
        let (e_txt, _) = encode_text(self.weights, &self.masked_tokens(kept)?)?;
        similarity(&self.e_img, &e_txt)
    }
}
