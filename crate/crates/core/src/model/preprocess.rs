use super::config::PreprocessConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_image(image: &Tensor, image_size: usize) -> Result<()> {
    if image.shape() != [image_size, image_size, 3] {
        return Err(Error::Dimension(format!(
            "image must be {image_size}x{image_size}x3, got {:?}",
            image.shape()
        )));
    }
    Ok(())
}

/// Channel-wise `(I - mean) / std` on an `H x W x 3` image.
pub fn preprocess(image: &Tensor, pre: &PreprocessConfig, image_size: usize) -> Result<Tensor> {
    check_image(image, image_size)?;
    pre.validate()?;
    let mut out = image.clone();
    for px in out.data_mut().chunks_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] - pre.mean[c]) / pre.std[c];
        }
    }
    Ok(out)
}

/// Inverse of [`preprocess`].
pub fn denormalize(image: &Tensor, pre: &PreprocessConfig) -> Result<Tensor> {
    if image.ndim() != 3 || image.shape()[2] != 3 {
        return Err(Error::Dimension(format!(
            "expected H x W x 3, got {:?}",
            image.shape()
        )));
    }
    let mut out = image.clone();
    for px in out.data_mut().chunks_mut(3) {
        for c in 0..3 {
            px[c] = px[c] * pre.std[c] + pre.mean[c];
        }
    }
    Ok(out)
}

/// Row-major patches, each flattened in (row, column, channel) order.
pub fn patchify(image: &Tensor, patch_size: usize) -> Result<Tensor> {
    let s = image.shape();
    if image.ndim() != 3 || s[2] != 3 || s[0] != s[1] || !s[0].is_multiple_of(patch_size) {
        return Err(Error::Dimension(format!(
            "cannot cut {patch_size}px patches from {s:?}"
        )));
    }
    let side = s[0];
    let g = side / patch_size;
    let pd = 3 * patch_size * patch_size;
    let src = image.data();
    let mut out = Vec::with_capacity(g * g * pd);
    for pr in 0..g {
        for pc in 0..g {
            for dy in 0..patch_size {
                let y = pr * patch_size + dy;
                let start = (y * side + pc * patch_size) * 3;
                out.extend_from_slice(&src[start..start + 3 * patch_size]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![g * g, pd], out))
}
