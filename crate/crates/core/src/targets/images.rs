use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flows::Level;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// A stack of greyscale images from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("IDX header truncated".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("IDX image magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let want = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != want {
        return Err(Error::Format(format!(
            "IDX image payload has {} bytes, header implies {want}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("IDX label magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "IDX label payload has {} bytes, header implies {count}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&fs::read(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

/// Pixels brighter than `tau` (on a `[0, 1]` scale) become 1.
pub fn binarize(image: &[u8], tau: f64) -> Vec<Level> {
    image
        .iter()
        .map(|&p| (f64::from(p) / 255.0 > tau) as Level)
        .collect()
}

/// Flips each binary pixel independently with probability `p`.
pub fn corrupt(image: &[Level], p: f64, seed: u64) -> Vec<Level> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    image
        .iter()
        .map(|&v| if rng.random::<f64>() < p { 1 - v } else { v })
        .collect()
}

/// A thick ring, used as a stand-in digit when no IDX file is available.
pub fn glyph_image(height: usize, width: usize) -> Vec<Level> {
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let outer = 0.44 * height.min(width) as f64;
    let inner = 0.2 * height.min(width) as f64;
    let mut img = vec![0; height * width];
    for r in 0..height {
        for c in 0..width {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let rad = (dy * dy + dx * dx).sqrt();
            img[r * width + c] = (rad <= outer && rad >= inner) as Level;
        }
    }
    img
}
