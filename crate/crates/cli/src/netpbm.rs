//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use mmel_core::Tensor;

use crate::error::{CliError, ImageError, Result};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &'static str) -> std::result::Result<Header, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageError::BadMagic {
            found,
            expected: magic,
        });
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for f in &mut fields {
        // Whitespace and comments before each field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Header("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Header(format!(
                "expected a number at byte {start}"
            )));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Header("number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(ImageError::Header(
                "missing separator before pixel data".into(),
            ))
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(ImageError::Header(format!("zero extent {width}x{height}")));
    }
    if maxval != 255 {
        return Err(ImageError::Maxval(maxval.min(u32::MAX as u64) as u32));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_start: pos,
    })
}

/// Decodes a P6 image to `H x W x 3` values `v / 255`.
pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<Tensor, ImageError> {
    let h = parse_header(bytes, "P6")?;
    debug_assert_eq!(h.maxval, 255);
    let expected = h.width * h.height * 3;
    let data = &bytes[h.data_start..];
    if data.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            got: data.len(),
        });
    }
    let values = data[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![h.height, h.width, 3], values).map_err(|e| ImageError::Header(e.to_string()))
}

/// Reads a P6 file and checks it is `image_size x image_size`.
pub fn read_ppm(path: &Path, image_size: usize) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let wrap = |source| CliError::Image {
        path: path.to_path_buf(),
        source,
    };
    let img = parse_ppm(&bytes).map_err(wrap)?;
    let (height, width) = (img.shape()[0], img.shape()[1]);
    if height != image_size || width != image_size {
        return Err(wrap(ImageError::SizeMismatch {
            expected: image_size,
            width,
            height,
        }));
    }
    Ok(img)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an `H x W x 3` image in `[0, 1]` as P6; values are clamped.
pub fn encode_ppm(img: &Tensor) -> Vec<u8> {
    let s = img.shape();
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| CliError::io(path, e))
}
