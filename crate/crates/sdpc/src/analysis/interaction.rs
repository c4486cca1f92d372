//! Interaction maps: the neighborhood of a strongly responding unit reduced
//! to a resulting orientation and magnitude per position.
//!
//! For one center, each retained orientation channel is adjusted against its
//! own marginal (the channel's spatial mean outside the neighborhood), the
//! adjusted activities enter a circular weighted average over orientations,
//! and maps from many centers and images are averaged component-wise in the
//! complex plane before conversion back to angle and magnitude.

use super::gabor::OrientationAtlas;
use crate::error::{Result, SdpcError};
use ndarray::{Array2, Array3};

/// Adjusted activity around one center: one `(2R+1)^2` grid per orientation
/// channel that had a usable marginal.
#[derive(Debug, Clone)]
pub struct AdjustedActivity {
    pub features: Vec<usize>,
    pub thetas: Vec<f64>,
    pub values: Vec<Array2<f32>>,
    pub radius: usize,
}

/// A finalized interaction map on a `(2R+1)^2` grid.
#[derive(Debug, Clone)]
pub struct InteractionMap {
    pub theta_bar: Array2<f64>,
    pub magnitude: Array2<f64>,
    pub theta_c: f64,
    pub k_fb: f32,
    pub radius: usize,
}

/// Relative activity between two maps from identical images and centers.
#[derive(Debug, Clone)]
pub struct ActivityRatio {
    pub ratio: Array2<f64>,
    /// False where the reference magnitude vanished.
    pub valid: Array2<bool>,
}

/// Running complex-component average over centers and images.
#[derive(Debug, Clone)]
pub struct MapAccumulator {
    sum_cos: Array2<f64>,
    sum_sin: Array2<f64>,
    pub maps: usize,
    pub skipped_images: usize,
    radius: usize,
}

impl MapAccumulator {
    pub fn new(radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self {
            sum_cos: Array2::zeros((side, side)),
            sum_sin: Array2::zeros((side, side)),
            maps: 0,
            skipped_images: 0,
            radius,
        }
    }

    fn add(&mut self, adjusted: &AdjustedActivity) {
        let n = adjusted.features.len() as f64;
        let side = 2 * self.radius + 1;
        for r in 0..side {
            for c in 0..side {
                let mut sc = 0.0f64;
                let mut ss = 0.0f64;
                for (k, grid) in adjusted.values.iter().enumerate() {
                    let a = grid[(r, c)] as f64;
                    let theta = adjusted.thetas[k];
                    sc += a * theta.cos();
                    ss += a * theta.sin();
                }
                self.sum_cos[(r, c)] += sc / n;
                self.sum_sin[(r, c)] += ss / n;
            }
        }
        self.maps += 1;
    }

    pub fn note_skipped_image(&mut self) {
        self.skipped_images += 1;
    }

    pub fn finalize(&self, theta_c: f64, k_fb: f32) -> Result<InteractionMap> {
        if self.maps == 0 {
            return Err(SdpcError::Analysis(
                "no interaction maps were accumulated".into(),
            ));
        }
        let side = 2 * self.radius + 1;
        let mut theta_bar = Array2::zeros((side, side));
        let mut magnitude = Array2::zeros((side, side));
        let inv = 1.0 / self.maps as f64;
        for r in 0..side {
            for c in 0..side {
                let cos_avg = self.sum_cos[(r, c)] * inv;
                let sin_avg = self.sum_sin[(r, c)] * inv;
                theta_bar[(r, c)] = sin_avg.atan2(cos_avg);
                magnitude[(r, c)] = (cos_avg * cos_avg + sin_avg * sin_avg).sqrt();
            }
        }
        Ok(InteractionMap {
            theta_bar,
            magnitude,
            theta_c,
            k_fb,
            radius: self.radius,
        })
    }
}

/// Adjusts the neighborhood of `center` against per-channel marginals.
///
/// A channel whose marginal is zero carries no measurable preference and is
/// skipped for this center; when every channel is skipped the center is
/// unusable and an error is returned so callers can count the skip.
pub fn adjusted_activity(
    gamma1: &Array3<f32>,
    atlas: &OrientationAtlas,
    center: (usize, usize),
    radius: usize,
) -> Result<AdjustedActivity> {
    let (f, h, w) = gamma1.dim();
    if atlas.theta.len() != f {
        return Err(SdpcError::Analysis(format!(
            "atlas covers {} features but the map has {f}",
            atlas.theta.len()
        )));
    }
    let (cr, cc) = center;
    if cr < radius || cc < radius || cr + radius >= h || cc + radius >= w {
        return Err(SdpcError::Analysis(format!(
            "center ({cr},{cc}) leaves no {radius}-cell margin in a {h}x{w} map"
        )));
    }

    let side = 2 * radius + 1;
    let mut features = Vec::new();
    let mut thetas = Vec::new();
    let mut values = Vec::new();
    for feat in atlas.retained_features() {
        // marginal: spatial mean outside the neighborhood box
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for r in 0..h {
            for c in 0..w {
                let inside = r + radius >= cr && r <= cr + radius && c + radius >= cc && c <= cc + radius;
                if !inside {
                    sum += gamma1[(feat, r, c)] as f64;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(SdpcError::Analysis(
                "neighborhood covers the whole map; no marginal positions left".into(),
            ));
        }
        let marginal = sum / count as f64;
        if marginal <= 0.0 {
            continue;
        }
        let mut grid = Array2::zeros((side, side));
        for dr in 0..side {
            for dc in 0..side {
                let v = gamma1[(feat, cr + dr - radius, cc + dc - radius)] as f64;
                grid[(dr, dc)] = ((v - marginal) / marginal) as f32;
            }
        }
        features.push(feat);
        thetas.push(atlas.theta[feat]);
        values.push(grid);
    }

    if features.is_empty() {
        return Err(SdpcError::Analysis(
            "all orientation marginals are zero around this center".into(),
        ));
    }
    Ok(AdjustedActivity {
        features,
        thetas,
        values,
        radius,
    })
}

/// Circular weighted average of one adjusted neighborhood.
pub fn interaction_map(adjusted: &AdjustedActivity, theta_c: f64, k_fb: f32) -> InteractionMap {
    let mut acc = MapAccumulator::new(adjusted.radius);
    acc.add(adjusted);
    acc.finalize(theta_c, k_fb).expect("accumulator holds one map")
}

/// Positions of the `top_k` strongest responses of `feature`, restricted to
/// centers with a full `radius` margin, ranked by coefficient value with
/// row-major order breaking ties. Zero responses never become centers.
pub fn select_centers(
    gamma1: &Array3<f32>,
    feature: usize,
    top_k: usize,
    radius: usize,
) -> Vec<(usize, usize)> {
    let (_, h, w) = gamma1.dim();
    if h < 2 * radius + 1 || w < 2 * radius + 1 {
        return Vec::new();
    }
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for r in radius..h - radius {
        for c in radius..w - radius {
            let v = gamma1[(feature, r, c)];
            if v > 0.0 {
                candidates.push((v, r, c));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    candidates.truncate(top_k);
    candidates.into_iter().map(|(_, r, c)| (r, c)).collect()
}

/// Accumulates maps for one image's inference output into `acc`; counts the
/// image as skipped when no center yields a usable neighborhood.
pub fn accumulate_image(
    acc: &mut MapAccumulator,
    gamma1: &Array3<f32>,
    atlas: &OrientationAtlas,
    centers: &[(usize, usize)],
    radius: usize,
) {
    let mut used = 0;
    for &center in centers {
        if let Ok(adj) = adjusted_activity(gamma1, atlas, center, radius) {
            acc.add(&adj);
            used += 1;
        }
    }
    if used == 0 {
        acc.note_skipped_image();
    }
}

/// Element-wise magnitude ratio between a map and its no-feedback reference.
pub fn activity_ratio(map_kfb: &InteractionMap, map_k0: &InteractionMap) -> Result<ActivityRatio> {
    if map_kfb.magnitude.dim() != map_k0.magnitude.dim() {
        return Err(SdpcError::Analysis("activity maps have different grids".into()));
    }
    let dim = map_k0.magnitude.dim();
    let mut ratio = Array2::<f64>::zeros(dim);
    let mut valid = Array2::from_elem(dim, false);
    for r in 0..dim.0 {
        for c in 0..dim.1 {
            let denom = map_k0.magnitude[(r, c)];
            if denom > 1e-12 {
                ratio[(r, c)] = map_kfb.magnitude[(r, c)] / denom;
                valid[(r, c)] = true;
            }
        }
    }
    Ok(ActivityRatio { ratio, valid })
}
