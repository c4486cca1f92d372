//! Structural similarity between two images.

use crate::error::{Result, SdpcError};
use ndarray::{Array2, Array3, Axis};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

fn gaussian_window() -> Array2<f64> {
    let half = (WINDOW / 2) as isize;
    let mut w = Array2::zeros((WINDOW, WINDOW));
    let mut total = 0.0;
    for i in 0..WINDOW {
        for j in 0..WINDOW {
            let (di, dj) = (i as isize - half, j as isize - half);
            let v = (-((di * di + dj * dj) as f64) / (2.0 * SIGMA * SIGMA)).exp();
            w[(i, j)] = v;
            total += v;
        }
    }
    w.mapv_inplace(|v| v / total);
    w
}

fn to_gray(image: &Array3<f32>) -> Array2<f64> {
    let (c, h, w) = image.dim();
    let mut gray = Array2::zeros((h, w));
    for ch in 0..c {
        let plane = image.index_axis(Axis(0), ch);
        for i in 0..h {
            for j in 0..w {
                gray[(i, j)] += plane[(i, j)] as f64;
            }
        }
    }
    gray.mapv_inplace(|v| v / c as f64);
    gray
}

/// Mean structural similarity over all fully interior 11x11 Gaussian
/// windows (sigma 1.5). Color images are converted to grayscale by channel
/// averaging; the stabilization constants use `C1 = (0.01 L)^2` and
/// `C2 = (0.03 L)^2` with `L` the larger of the two dynamic ranges, which
/// keeps the measure symmetric in its arguments.
pub fn ssim(img_a: &Array3<f32>, img_b: &Array3<f32>) -> Result<f64> {
    if img_a.dim() != img_b.dim() {
        return Err(SdpcError::Analysis(format!(
            "ssim needs equal dims, got {:?} vs {:?}",
            img_a.dim(),
            img_b.dim()
        )));
    }
    let a = to_gray(img_a);
    let b = to_gray(img_b);
    let (h, w) = a.dim();
    if h < WINDOW || w < WINDOW {
        return Err(SdpcError::Analysis(format!(
            "image {h}x{w} smaller than the {WINDOW}x{WINDOW} ssim window"
        )));
    }

    let range = |m: &Array2<f64>| {
        let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max - min
    };
    let l = range(&a).max(range(&b)).max(1e-9);
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);

    let window = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(h - WINDOW) {
        for left in 0..=(w - WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for i in 0..WINDOW {
                for j in 0..WINDOW {
                    let g = window[(i, j)];
                    let va = a[(top + i, left + j)];
                    let vb = b[(top + i, left + j)];
                    mu_a += g * va;
                    mu_b += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += value;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0f32..1.0))
    }

    #[test]
    fn identical_images_score_one() {
        let img = random_image(11, 3, 16, 16);
        let s = ssim(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "ssim {s}");
    }

    #[test]
    fn negated_structure_scores_nonpositive() {
        // input with zero local means (period-2 stripes), so the luminance
        // term is inert and the anti-correlated structure dominates
        let img = Array3::from_shape_fn(
            (1, 16, 16),
            |(_, _, j)| if j % 2 == 0 { 0.5f32 } else { -0.5 },
        );
        let neg = img.mapv(|v| -v);
        let s = ssim(&img, &neg).unwrap();
        assert!(s <= 0.0, "ssim {s}");
    }

    #[test]
    fn symmetric_in_its_arguments() {
        let a = random_image(13, 1, 14, 14);
        let b = random_image(14, 1, 14, 14).mapv(|v| v * 3.0);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-9);
    }

    #[test]
    fn dims_must_match() {
        let a = random_image(15, 1, 12, 12);
        let b = random_image(16, 1, 13, 12);
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn noise_degrades_similarity_monotonically() {
        let clean = random_image(17, 1, 20, 20).mapv(|v| v * 0.3);
        let mut last = 1.1;
        for sigma_step in 0..6 {
            let sigma = sigma_step as f32;
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let noise = crate::util::standard_normal(&mut rng, clean.len());
            let mut noisy = clean.clone();
            for (v, n) in noisy.iter_mut().zip(noise) {
                *v += sigma * n;
            }
            let s = ssim(&clean, &noisy).unwrap();
            assert!(s <= last + 1e-9, "sigma {sigma}: ssim {s} rose above {last}");
            last = s;
        }
    }
}
