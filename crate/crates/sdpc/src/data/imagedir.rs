//! Generic image-directory loader and PNG helpers.

use super::ImageBatch;
use crate::error::{Result, SdpcError};
use image::imageops::FilterType;
use ndarray::{Array3, Array4};
use std::path::Path;

/// Outcome of scanning a directory: the decoded batch plus any files that
/// were skipped, with the reason.
#[derive(Debug)]
pub struct LoadReport {
    pub batch: ImageBatch,
    pub skipped: Vec<(String, String)>,
}

fn is_image_file(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg")
}

/// Loads every PNG/JPEG in a directory in lexicographic filename order,
/// bilinearly resized to `(height, width)` and expanded to `channels`
/// (1 = luma, 3 = RGB). Unreadable files are skipped and listed in the
/// report rather than failing the whole load.
pub fn load_image_dir(
    path: &Path,
    resize: (usize, usize),
    channels: usize,
) -> Result<LoadReport> {
    if channels != 1 && channels != 3 {
        return Err(SdpcError::Config(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    let (h, w) = resize;
    if h == 0 || w == 0 {
        return Err(SdpcError::Config("resize dims must be positive".into()));
    }

    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(path)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if is_image_file(&name) {
            names.push(name);
        }
    }
    names.sort();

    let mut images = Vec::new();
    let mut ids = Vec::new();
    let mut skipped = Vec::new();
    for name in names {
        let full = path.join(&name);
        match image::open(&full) {
            Ok(img) => {
                let resized = img.resize_exact(w as u32, h as u32, FilterType::Triangle);
                let mut plane = Array3::zeros((channels, h, w));
                if channels == 3 {
                    let rgb = resized.to_rgb8();
                    for (x, y, pixel) in rgb.enumerate_pixels() {
                        for c in 0..3 {
                            plane[(c, y as usize, x as usize)] = pixel.0[c] as f32 / 255.0;
                        }
                    }
                } else {
                    let luma = resized.to_luma8();
                    for (x, y, pixel) in luma.enumerate_pixels() {
                        plane[(0, y as usize, x as usize)] = pixel.0[0] as f32 / 255.0;
                    }
                }
                images.push(plane);
                ids.push(name);
            }
            Err(e) => {
                eprintln!("warning: skipping unreadable image {}: {e}", full.display());
                skipped.push((name, e.to_string()));
            }
        }
    }

    let mut data = Array4::zeros((images.len(), channels, h, w));
    for (i, img) in images.iter().enumerate() {
        data.index_axis_mut(ndarray::Axis(0), i).assign(img);
    }
    Ok(LoadReport {
        batch: ImageBatch::new(data, ids)?,
        skipped,
    })
}

/// Writes a `[C, H, W]` tensor as a PNG, clamping values into `[0, 1]`.
/// Single-channel tensors become grayscale, three-channel become RGB.
pub fn save_png(path: &Path, image: &Array3<f32>) -> Result<()> {
    let (c, h, w) = image.dim();
    let to_byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match c {
        1 => {
            let mut img = image::GrayImage::new(w as u32, h as u32);
            for (x, y, pixel) in img.enumerate_pixels_mut() {
                pixel.0[0] = to_byte(image[(0, y as usize, x as usize)]);
            }
            img.save(path)
                .map_err(|e| SdpcError::Data(format!("PNG write failed: {e}")))?;
        }
        3 => {
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for (x, y, pixel) in img.enumerate_pixels_mut() {
                for ch in 0..3 {
                    pixel.0[ch] = to_byte(image[(ch, y as usize, x as usize)]);
                }
            }
            img.save(path)
                .map_err(|e| SdpcError::Data(format!("PNG write failed: {e}")))?;
        }
        _ => {
            return Err(SdpcError::Data(format!(
                "can only render 1- or 3-channel tensors, got {c}"
            )))
        }
    }
    Ok(())
}

/// Rescales a tensor to `[0, 1]` per channel-set for display purposes.
pub fn normalize_for_display(image: &Array3<f32>) -> Array3<f32> {
    let min = image.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = image.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if !min.is_finite() || !max.is_finite() || max - min < 1e-12 {
        return Array3::zeros(image.dim());
    }
    image.mapv(|v| (v - min) / (max - min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("sdpc-imagedir-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn empty_directory_gives_empty_batch() {
        let dir = temp_dir("empty");
        let report = load_image_dir(&dir, (8, 8), 3).unwrap();
        assert_eq!(report.batch.len(), 0);
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn solid_gray_image_loads_as_constant() {
        let dir = temp_dir("gray");
        let img = image::RgbImage::from_pixel(12, 12, image::Rgb([128, 128, 128]));
        img.save(dir.join("gray.png")).unwrap();
        let report = load_image_dir(&dir, (6, 6), 3).unwrap();
        assert_eq!(report.batch.len(), 1);
        let want = 128.0 / 255.0;
        for &v in report.batch.data.iter() {
            assert!((v - want).abs() < 1e-2, "value {v}");
        }
    }

    #[test]
    fn face_protocol_dims_survive_resize() {
        let dir = temp_dir("resize");
        let img = image::RgbImage::from_pixel(64, 48, image::Rgb([10, 200, 30]));
        img.save(dir.join("a.png")).unwrap();
        let report = load_image_dir(&dir, (170, 120), 1).unwrap();
        assert_eq!(report.batch.data.dim(), (1, 1, 170, 120));
    }

    #[test]
    fn unreadable_files_are_skipped_and_reported() {
        let dir = temp_dir("bad");
        std::fs::write(dir.join("broken.png"), b"this is not a png").unwrap();
        let good = image::RgbImage::from_pixel(4, 4, image::Rgb([1, 2, 3]));
        good.save(dir.join("good.png")).unwrap();
        let report = load_image_dir(&dir, (4, 4), 3).unwrap();
        assert_eq!(report.batch.len(), 1);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].0, "broken.png");
    }

    #[test]
    fn ordering_is_lexicographic() {
        let dir = temp_dir("order");
        for name in ["b.png", "a.png", "c.png"] {
            image::GrayImage::from_pixel(2, 2, image::Luma([7]))
                .save(dir.join(name))
                .unwrap();
        }
        let report = load_image_dir(&dir, (2, 2), 1).unwrap();
        assert_eq!(report.batch.ids, vec!["a.png", "b.png", "c.png"]);
    }
}
