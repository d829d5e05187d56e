//! Embedding files, image loading and similarity.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cosine similarity accumulated in f64. Two zero vectors compare as 1, a
/// zero vector against a non-zero one as 0.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            axis: "length",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok(match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32,
        (false, false) => 1.0,
        _ => 0.0,
    })
}

pub fn l2_normalize(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| (x as f64 / norm) as f32).collect()
}

/// Raw little-endian f32 values, no header.
pub fn write_embedding(path: impl AsRef<Path>, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    decode_f32(
        &std::fs::read(path.as_ref())?,
        &path.as_ref().display().to_string(),
    )
}

fn decode_f32(bytes: &[u8], what: &str) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Archive(format!(
            "{what}: {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Loads a `[1, 3, size, size]` image.
///
/// `.png` files must be `size x size`; 8-bit channels map to `v / 127.5 - 1`.
/// Anything else is read as `3 * size * size` raw little-endian f32 values in
/// channel-major order.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let img = image::open(path)
            .map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if (w as usize, h as usize) != (size, size) {
            return Err(Error::Archive(format!(
                "{}: image is {w}x{h}, expected {size}x{size}",
                path.display()
            )));
        }
        return Ok(Tensor::from_fn([1, 3, size, size], |[_, c, y, x]| {
            img.get_pixel(x as u32, y as u32)[c] as f32 / 127.5 - 1.0
        }));
    }
    let values = decode_f32(&std::fs::read(path)?, &path.display().to_string())?;
    if values.len() != 3 * size * size {
        return Err(Error::Archive(format!(
            "{}: {} values, expected 3x{size}x{size}",
            path.display(),
            values.len()
        )));
    }
    Tensor::new([1, 3, size, size], values)
}
