//! Local contrast normalization: subtract a Gaussian-weighted local mean,
//! then divide by the Gaussian-weighted local standard deviation pooled
//! across channels, floored at epsilon.

use super::ImageBatch;
use crate::error::{Result, SdpcError};
use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

/// Symmetric Gaussian taps for an odd window. The width scales with the
/// window so the default 9-tap kernel has standard deviation 2.
fn gaussian_taps(kernel_size: usize) -> Vec<f64> {
    let sigma = kernel_size as f64 / 4.5;
    let half = (kernel_size / 2) as isize;
    (-half..=half)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable Gaussian filtering with per-position renormalization, so the
/// window keeps unit mass where it is truncated by the border.
fn gaussian_filter(plane: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let half = taps.len() as isize / 2;

    let mut rows = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                let jj = j as isize + t as isize - half;
                if jj >= 0 && (jj as usize) < w {
                    acc += g * plane[(i, jj as usize)];
                    mass += g;
                }
            }
            rows[(i, j)] = acc / mass;
        }
    }

    let mut out = Array2::zeros((h, w));
    for j in 0..w {
        for i in 0..h {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                let ii = i as isize + t as isize - half;
                if ii >= 0 && (ii as usize) < h {
                    acc += g * rows[(ii as usize, j)];
                    mass += g;
                }
            }
            out[(i, j)] = acc / mass;
        }
    }
    out
}

/// Gaussian-weighted local mean of one channel plane. Public so analyses can
/// recompute local statistics of an already-normalized image.
pub fn local_mean(plane: &Array2<f64>, kernel_size: usize) -> Array2<f64> {
    gaussian_filter(plane, &gaussian_taps(kernel_size))
}

fn lcn_image(image: &Array3<f32>, kernel_size: usize, epsilon: f32) -> Array3<f32> {
    let (c, h, w) = image.dim();
    let taps = gaussian_taps(kernel_size);

    let mut centered = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = image.index_axis(Axis(0), ch).mapv(|v| v as f64);
        let mean = gaussian_filter(&plane, &taps);
        centered.push(&plane - &mean);
    }

    // divisive pool: local variance averaged across channels
    let mut pooled = Array2::<f64>::zeros((h, w));
    for v in &centered {
        let sq = v.mapv(|x| x * x);
        pooled += &gaussian_filter(&sq, &taps);
    }
    pooled.mapv_inplace(|x| (x / c as f64).max(0.0).sqrt());

    let mut out = Array3::zeros((c, h, w));
    for (ch, v) in centered.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                let denom = pooled[(i, j)].max(epsilon as f64);
                out[(ch, i, j)] = (v[(i, j)] / denom) as f32;
            }
        }
    }
    out
}

/// Applies local contrast normalization to every image in the batch.
pub fn lcn(batch: &ImageBatch, kernel_size: usize, epsilon: f32) -> Result<ImageBatch> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(SdpcError::Config(format!(
            "LCN kernel size must be odd, got {kernel_size}"
        )));
    }
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(SdpcError::Config(format!(
            "LCN epsilon must be positive, got {epsilon}"
        )));
    }
    let images: Vec<Array3<f32>> = (0..batch.len())
        .into_par_iter()
        .map(|i| lcn_image(&batch.image(i), kernel_size, epsilon))
        .collect();
    let mut data = ndarray::Array4::zeros(batch.data.dim());
    for (i, img) in images.iter().enumerate() {
        data.index_axis_mut(Axis(0), i).assign(img);
    }
    ImageBatch::new(data, batch.ids.clone())
}
