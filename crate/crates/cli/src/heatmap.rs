use std::path::Path;

use mmel_core::Tensor;

use crate::error::{CliError, ImageError, Result};
use crate::netpbm::encode_pgm;

/// Bilinear resize of an `H x W` grid to `size x size` with half-pixel
/// centers; samples outside the grid clamp to the border.
pub fn upsample_bilinear(map: &Tensor, size: usize) -> Tensor {
    let (h, w) = (map.rows(), map.cols());
    let coord = |dst: usize, n: usize| {
        let src = ((dst as f64 + 0.5) * n as f64 / size as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let (y0, y1, fy) = coord(y, h);
        for x in 0..size {
            let (x0, x1, fx) = coord(x, w);
            let top = map.get2(y0, x0) * (1.0 - fx) + map.get2(y0, x1) * fx;
            let bottom = map.get2(y1, x0) * (1.0 - fx) + map.get2(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::matrix(size, size, out).expect("finite convex combination")
}

/// P5 bytes of a `[0, 1]` patch map upsampled to `size x size`.
pub fn heatmap_pgm(map: &Tensor, size: usize) -> std::result::Result<Vec<u8>, ImageError> {
    if let Some(&v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(ImageError::Range(v));
    }
    let up = upsample_bilinear(map, size);
    let pixels: Vec<u8> = up
        .data()
        .iter()
        .map(|&v| (255.0 * v).round() as u8)
        .collect();
    Ok(encode_pgm(size, size, &pixels))
}

pub fn write_heatmap(map: &Tensor, size: usize, path: &Path) -> Result<()> {
    let bytes = heatmap_pgm(map, size).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
