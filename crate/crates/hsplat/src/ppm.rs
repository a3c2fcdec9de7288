//! Binary PPM (P6) images with 8-bit channels.

use std::path::Path;

use hsplat_core::numerics::Tensor;

use crate::{read_file, write_file, Error};

/// Rounds `[0, 1]` floats to bytes; out-of-range values are clamped.
pub fn to_bytes(image: &Tensor<f32>) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode(image: &Tensor<f32>) -> Result<Vec<u8>, String> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(format!("expected an [H, W, 3] image, got {s:?}"));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(to_bytes(image));
    Ok(out)
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, String> {
    let t = token(bytes, pos).ok_or_else(|| format!("missing {what}"))?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad {what}"))
}

/// `[H, W, 3]` image with values `byte / 255`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>, String> {
    let mut pos = 0;
    if token(bytes, &mut pos) != Some(b"P6") {
        return Err("not a binary PPM (missing P6 magic)".into());
    }
    let w = number(bytes, &mut pos, "width")?;
    let h = number(bytes, &mut pos, "height")?;
    let max = number(bytes, &mut pos, "maximum value")?;
    if max != 255 {
        return Err(format!("only 8-bit PPM is supported, maximum value is {max}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let n = h * w * 3;
    if body.len() < n {
        return Err(format!("truncated raster: {} of {n} bytes", body.len()));
    }
    let data = body[..n].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(&[h, w, 3], data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, image: &Tensor<f32>) -> Result<(), Error> {
    let bytes = encode(image).map_err(|reason| Error::format(path, reason))?;
    write_file(path, &bytes)
}

pub fn read(path: &Path) -> Result<Tensor<f32>, Error> {
    decode(&read_file(path)?).map_err(|reason| Error::format(path, reason))
}
