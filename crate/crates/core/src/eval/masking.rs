use crate::attrib::{AttributionMap, Provenance};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Fill the selected top patches.
    RemoveTop,
    /// Fill everything except the selected top patches.
    KeepTop,
}

/// Unit indices by descending score; equal scores keep ascending index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `round(fraction * n)`, rounding halves away from zero.
pub fn top_k_count(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    Ok(((fraction * n as f64).round() as usize).min(n))
}

/// Membership of the `k` highest-ranked units.
pub fn top_k_mask(scores: &[f64], k: usize) -> Vec<bool> {
    let mut sel = vec![false; scores.len()];
    for &i in rank_descending(scores).iter().take(k) {
        sel[i] = true;
    }
    sel
}

/// Overwrites every patch whose `fill_patch` flag is set with `fill`.
pub fn fill_patches(image: &Tensor, fill_patch: &[bool], fill: f64) -> Result<Tensor> {
    let s = image.shape();
    if image.ndim() != 3 || s[0] != s[1] || s[2] != 3 {
        return Err(Error::Dimension(format!(
            "expected square H x W x 3 image, got {s:?}"
        )));
    }
    let side = (fill_patch.len() as f64).sqrt().round() as usize;
    if side == 0 || side * side != fill_patch.len() || !s[0].is_multiple_of(side) {
        return Err(Error::Dimension(format!(
            "{} patches do not tile a {}px image",
            fill_patch.len(),
            s[0]
        )));
    }
    let p = s[0] / side;
    let mut out = image.clone();
    let data = out.data_mut();
    for (idx, _) in fill_patch.iter().enumerate().filter(|(_, &f)| f) {
        let (pr, pc) = (idx / side, idx % side);
        for y in pr * p..(pr + 1) * p {
            let start = (y * s[0] + pc * p) * 3;
            data[start..start + 3 * p]
                .iter_mut()
                .for_each(|v| *v = fill);
        }
    }
    Ok(out)
}

/// Masks a normalized image by the patch ranking of `map`. `fill` is in
/// normalized units, so 0 is the channel mean.
pub fn mask_image(
    image: &Tensor,
    map: &AttributionMap,
    fraction: f64,
    mode: MaskMode,
    fill: f64,
) -> Result<Tensor> {
    if map.extents().is_none() {
        return Err(Error::Consistency(
            "image masking needs a patch-grid map".into(),
        ));
    }
    let k = top_k_count(fraction, map.len())?;
    let top = top_k_mask(map.data(), k);
    let fill_patch: Vec<bool> = match mode {
        MaskMode::RemoveTop => top,
        MaskMode::KeepTop => top.iter().map(|t| !t).collect(),
    };
    fill_patches(image, &fill_patch, fill)
}

/// Control map of i.i.d. uniform `[0, 1)` patch scores.
pub fn random_attribution(seed: u64, side: usize) -> Result<AttributionMap> {
    if side == 0 {
        return Err(Error::Parameter("grid side must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let data = (0..side * side).map(|_| rng.uniform()).collect();
    AttributionMap::grid(Tensor::matrix(side, side, data)?, Provenance::Random)
}

/// Map whose ranking is the reverse of `map`'s (`max - v`).
pub fn inverse_map(map: &AttributionMap) -> Result<AttributionMap> {
    let hi = map.data().iter().copied().fold(0.0, f64::max);
    let values = map.values().map(|v| hi - v);
    match map.extents() {
        Some(_) => AttributionMap::grid(values, map.provenance()),
        None => Err(Error::Consistency(
            "inverse of a token map is not defined".into(),
        )),
    }
}
