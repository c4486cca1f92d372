//! STL-10 binary reader and writer.
//!
//! Each image occupies 27648 bytes: three 96x96 planes (red, green, blue),
//! every plane stored column-major, one byte per pixel.

use super::ImageBatch;
use crate::error::{Result, SdpcError};
use ndarray::Array4;
use std::path::Path;

pub const IMAGE_SIDE: usize = 96;
pub const CHANNELS: usize = 3;
pub const BYTES_PER_IMAGE: usize = CHANNELS * IMAGE_SIDE * IMAGE_SIDE;

/// Loads every image in an STL-10 binary file, scaling bytes to `[0, 1]`.
pub fn load_stl10(path: &Path) -> Result<ImageBatch> {
    let bytes = std::fs::read(path)?;
    load_stl10_bytes(&bytes, &path.display().to_string())
}

pub fn load_stl10_bytes(bytes: &[u8], origin: &str) -> Result<ImageBatch> {
    if bytes.len() % BYTES_PER_IMAGE != 0 {
        let valid = bytes.len() - bytes.len() % BYTES_PER_IMAGE;
        return Err(SdpcError::Format {
            path: origin.to_string(),
            detail: format!(
                "file size {} is not a multiple of {BYTES_PER_IMAGE}; trailing data begins at byte offset {valid}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / BYTES_PER_IMAGE;
    let mut data = Array4::zeros((n, CHANNELS, IMAGE_SIDE, IMAGE_SIDE));
    for i in 0..n {
        let img = &bytes[i * BYTES_PER_IMAGE..(i + 1) * BYTES_PER_IMAGE];
        for c in 0..CHANNELS {
            let plane = &img[c * IMAGE_SIDE * IMAGE_SIDE..(c + 1) * IMAGE_SIDE * IMAGE_SIDE];
            for col in 0..IMAGE_SIDE {
                for row in 0..IMAGE_SIDE {
                    data[(i, c, row, col)] = plane[col * IMAGE_SIDE + row] as f32 / 255.0;
                }
            }
        }
    }
    let ids = (0..n).map(|i| format!("stl10-{i:05}")).collect();
    ImageBatch::new(data, ids)
}

/// Writes a batch of 3x96x96 images in the STL-10 binary layout, rounding
/// `[0, 1]` values back to bytes.
pub fn save_stl10(path: &Path, batch: &ImageBatch) -> Result<()> {
    let (n, c, h, w) = batch.data.dim();
    if c != CHANNELS || h != IMAGE_SIDE || w != IMAGE_SIDE {
        return Err(SdpcError::Data(format!(
            "STL-10 layout requires {CHANNELS}x{IMAGE_SIDE}x{IMAGE_SIDE} images, got {c}x{h}x{w}"
        )));
    }
    let mut bytes = vec![0u8; n * BYTES_PER_IMAGE];
    for i in 0..n {
        let img = &mut bytes[i * BYTES_PER_IMAGE..(i + 1) * BYTES_PER_IMAGE];
        for ci in 0..CHANNELS {
            let plane = &mut img[ci * IMAGE_SIDE * IMAGE_SIDE..(ci + 1) * IMAGE_SIDE * IMAGE_SIDE];
            for col in 0..IMAGE_SIDE {
                for row in 0..IMAGE_SIDE {
                    let v = batch.data[(i, ci, row, col)].clamp(0.0, 1.0);
                    plane[col * IMAGE_SIDE + row] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
