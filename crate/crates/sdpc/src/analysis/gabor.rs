//! Gabor characterization of first-layer receptive fields.
//!
//! Orientation convention, used crate-wide: angles are measured in image
//! coordinates with `x` to the right and `y` pointing down the rows, and a
//! filter's `theta` is the direction its stripes run along (the direction of
//! an edge it responds to), taken modulo pi.

use crate::error::{Result, SdpcError};
use ndarray::{Array2, Axis};
use std::f64::consts::PI;

/// Best-fit Gabor description of one atom.
#[derive(Debug, Clone)]
pub struct GaborFit {
    /// Stripe orientation in `[0, pi)` radians.
    pub theta: f64,
    /// Carrier frequency in cycles per pixel.
    pub frequency: f64,
    /// Carrier phase in radians.
    pub phase: f64,
    /// Envelope standard deviations (along the carrier, across it), pixels.
    pub envelope: (f64, f64),
    /// Goodness of fit in `[0, 1]`.
    pub r2: f64,
    /// Set for atoms with no usable structure (all zero); theta is then
    /// meaningless.
    pub degenerate: bool,
}

/// Per-feature orientations with the poorly-fit features masked out.
#[derive(Debug, Clone)]
pub struct OrientationAtlas {
    pub theta: Vec<f64>,
    pub retained: Vec<bool>,
    pub r2: Vec<f64>,
}

impl OrientationAtlas {
    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|r| **r).count()
    }

    pub fn retained_features(&self) -> Vec<usize> {
        (0..self.retained.len()).filter(|&f| self.retained[f]).collect()
    }

    /// Retained feature with orientation circularly closest to `theta_c`,
    /// together with that distance (radians, mod pi).
    pub fn nearest_feature(&self, theta_c: f64) -> Option<(usize, f64)> {
        self.retained_features()
            .into_iter()
            .map(|f| (f, angular_distance_pi(self.theta[f], theta_c)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }
}

/// Circular distance between orientations (mod pi), in `[0, pi/2]`.
pub fn angular_distance_pi(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(PI);
    if d > PI / 2.0 {
        d = PI - d;
    }
    d
}

/// Channel-averaged grayscale version of an atom.
pub fn atom_to_gray(atom: &ndarray::ArrayView3<'_, f32>) -> Array2<f64> {
    let (c, h, w) = atom.dim();
    let mut gray = Array2::<f64>::zeros((h, w));
    for ch in 0..c {
        let plane = atom.index_axis(Axis(0), ch);
        for i in 0..h {
            for j in 0..w {
                gray[(i, j)] += plane[(i, j)] as f64;
            }
        }
    }
    gray.mapv(|v| v / c as f64)
}

struct Candidate {
    psi: f64,
    freq: f64,
    sx: f64,
    sy: f64,
}

/// Least-squares residual of the best amplitude/phase for one envelope and
/// carrier; returns (residual, a, b) for the model
/// `env * (a cos(2 pi f x') + b sin(2 pi f x'))`.
fn solve_amplitudes(
    atom: &Array2<f64>,
    cx: f64,
    cy: f64,
    cand: &Candidate,
    ss_total: f64,
) -> (f64, f64, f64) {
    let (h, w) = atom.dim();
    let (mut scc, mut sss, mut scs, mut scy, mut ssy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (cos_psi, sin_psi) = (cand.psi.cos(), cand.psi.sin());
    for i in 0..h {
        for j in 0..w {
            let x = j as f64 - cx;
            let y = i as f64 - cy;
            let along = x * cos_psi + y * sin_psi;
            let across = -x * sin_psi + y * cos_psi;
            let env = (-(along * along) / (2.0 * cand.sx * cand.sx)
                - (across * across) / (2.0 * cand.sy * cand.sy))
                .exp();
            let arg = 2.0 * PI * cand.freq * along;
            let c = env * arg.cos();
            let s = env * arg.sin();
            let yv = atom[(i, j)];
            scc += c * c;
            sss += s * s;
            scs += c * s;
            scy += c * yv;
            ssy += s * yv;
        }
    }
    let det = scc * sss - scs * scs;
    if det.abs() < 1e-12 {
        return (ss_total, 0.0, 0.0);
    }
    let a = (sss * scy - scs * ssy) / det;
    let b = (scc * ssy - scs * scy) / det;
    let explained = a * scy + b * ssy;
    ((ss_total - explained).max(0.0), a, b)
}

/// Fits a Gabor to a grayscale atom by coarse grid search over carrier
/// direction, frequency and envelope width, refined locally; amplitude and
/// phase are solved in closed form at every grid point.
pub fn fit_gabor(atom: &Array2<f64>) -> GaborFit {
    let (h, w) = atom.dim();
    let mean = atom.iter().sum::<f64>() / atom.len() as f64;
    let centered = atom.mapv(|v| v - mean);
    let ss_total: f64 = centered.iter().map(|v| v * v).sum();
    if ss_total <= 1e-12 {
        return GaborFit {
            theta: 0.0,
            frequency: 0.0,
            phase: 0.0,
            envelope: (0.0, 0.0),
            r2: 0.0,
            degenerate: true,
        };
    }

    // energy centroid as the envelope center
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut mass = 0.0;
    for i in 0..h {
        for j in 0..w {
            let e = centered[(i, j)].powi(2);
            cx += e * j as f64;
            cy += e * i as f64;
            mass += e;
        }
    }
    cx /= mass;
    cy /= mass;

    let side = h.min(w) as f64;
    let mut best = (f64::INFINITY, Candidate { psi: 0.0, freq: 0.1, sx: 1.0, sy: 1.0 }, 0.0, 0.0);

    let consider = |cand: Candidate, best: &mut (f64, Candidate, f64, f64)| {
        let (res, a, b) = solve_amplitudes(&centered, cx, cy, &cand, ss_total);
        if res < best.0 {
            *best = (res, cand, a, b);
        }
    };

    for psi_step in 0..24 {
        let psi = psi_step as f64 * PI / 24.0;
        for freq_step in 0..9 {
            let freq = 0.06 + 0.05 * freq_step as f64;
            for &scale in &[0.15, 0.25, 0.4] {
                let s = (scale * side).max(0.8);
                consider(Candidate { psi, freq, sx: s, sy: s }, &mut best);
            }
        }
    }

    // local refinement around the winner
    let coarse_psi = best.1.psi;
    let coarse_freq = best.1.freq;
    let coarse_s = best.1.sx;
    for dpsi in -5..=5 {
        let psi = coarse_psi + dpsi as f64 * PI / 120.0;
        for dfreq in -4..=4 {
            let freq = (coarse_freq + dfreq as f64 * 0.01).max(0.01);
            for &(fx, fy) in &[(1.0, 1.0), (0.7, 1.0), (1.0, 0.7), (1.4, 1.4), (0.6, 1.6)] {
                consider(
                    Candidate {
                        psi,
                        freq,
                        sx: coarse_s * fx,
                        sy: coarse_s * fy,
                    },
                    &mut best,
                );
            }
        }
    }

    let (residual, cand, a, b) = best;
    let r2 = (1.0 - residual / ss_total).clamp(0.0, 1.0);
    // stripes run orthogonal to the carrier direction
    let theta = (cand.psi + PI / 2.0).rem_euclid(PI);
    GaborFit {
        theta,
        frequency: cand.freq,
        phase: b.atan2(a),
        envelope: (cand.sx, cand.sy),
        r2,
        degenerate: false,
    }
}

/// Fits every atom of a first-layer dictionary (channel-averaged).
pub fn fit_dictionary(atoms: &ndarray::Array4<f32>) -> Vec<GaborFit> {
    use rayon::prelude::*;
    let n = atoms.dim().0;
    (0..n)
        .into_par_iter()
        .map(|f| {
            let gray = atom_to_gray(&atoms.index_axis(Axis(0), f));
            fit_gabor(&gray)
        })
        .collect()
}

/// Retains features whose fit reaches `r2_threshold`. Fails when fewer than
/// four survive, since orientation averages over fewer channels are
/// meaningless.
pub fn build_atlas(fits: &[GaborFit], r2_threshold: f64) -> Result<OrientationAtlas> {
    let retained: Vec<bool> = fits
        .iter()
        .map(|f| !f.degenerate && f.r2 >= r2_threshold)
        .collect();
    let atlas = OrientationAtlas {
        theta: fits.iter().map(|f| f.theta).collect(),
        r2: fits.iter().map(|f| f.r2).collect(),
        retained,
    };
    if atlas.retained_count() < 4 {
        return Err(SdpcError::Analysis(format!(
            "only {} of {} features fit well enough for orientation analysis",
            atlas.retained_count(),
            fits.len()
        )));
    }
    Ok(atlas)
}

/// Renders a synthetic Gabor patch; the test-side generator for the
/// synthesize-then-fit checks and a handy probe stimulus.
pub fn synthesize_gabor(
    size: usize,
    theta: f64,
    frequency: f64,
    phase: f64,
    envelope: f64,
) -> Array2<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let psi = theta + PI / 2.0; // carrier runs orthogonal to the stripes
    let (cos_psi, sin_psi) = (psi.cos(), psi.sin());
    Array2::from_shape_fn((size, size), |(i, j)| {
        let x = j as f64 - c;
        let y = i as f64 - c;
        let along = x * cos_psi + y * sin_psi;
        let across = -x * sin_psi + y * cos_psi;
        let env = (-(along * along + across * across) / (2.0 * envelope * envelope)).exp();
        env * (2.0 * PI * frequency * along + phase).cos()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_synthetic_gabor() {
        let atom = synthesize_gabor(11, 30f64.to_radians(), 0.2, 0.3, 2.0);
        let fit = fit_gabor(&atom);
        assert!(!fit.degenerate);
        assert!(fit.r2 >= 0.95, "r2 {}", fit.r2);
        let err = angular_distance_pi(fit.theta, 30f64.to_radians());
        assert!(err.to_degrees() <= 3.0, "theta off by {}", err.to_degrees());
        assert!((fit.frequency - 0.2).abs() < 0.05);
    }

    #[test]
    fn rotation_by_ninety_shifts_theta_by_ninety() {
        let a = synthesize_gabor(11, 20f64.to_radians(), 0.18, 0.0, 2.2);
        let b = synthesize_gabor(11, 110f64.to_radians(), 0.18, 0.0, 2.2);
        let fa = fit_gabor(&a);
        let fb = fit_gabor(&b);
        let shift = angular_distance_pi(fa.theta + PI / 2.0, fb.theta);
        assert!(shift.to_degrees() <= 4.0, "shift error {}", shift.to_degrees());
    }

    #[test]
    fn constant_atom_scores_low() {
        let atom = Array2::from_elem((9, 9), 0.4);
        let fit = fit_gabor(&atom);
        // zero-mean removal leaves nothing: degenerate with r2 = 0
        assert!(fit.degenerate);
        assert!(fit.r2 <= 0.1);
    }

    #[test]
    fn dc_plus_tiny_noise_scores_low() {
        let mut atom = Array2::from_elem((9, 9), 0.4);
        // smooth corner bump, no oriented structure
        atom[(0, 0)] += 0.02;
        atom[(8, 8)] -= 0.02;
        let fit = fit_gabor(&atom);
        assert!(fit.r2 <= 0.6, "r2 {}", fit.r2);
    }

    #[test]
    fn atlas_keeps_good_fits_and_errors_when_starved() {
        let good = GaborFit {
            theta: 0.5,
            frequency: 0.2,
            phase: 0.0,
            envelope: (2.0, 2.0),
            r2: 1.0,
            degenerate: false,
        };
        let fits: Vec<GaborFit> = (0..6).map(|_| good.clone()).collect();
        let atlas = build_atlas(&fits, 0.5).unwrap();
        assert_eq!(atlas.retained_count(), 6);

        assert!(build_atlas(&fits, 1.01).is_err());
    }

    #[test]
    fn nearest_feature_uses_circular_distance() {
        let mk = |theta: f64| GaborFit {
            theta,
            frequency: 0.2,
            phase: 0.0,
            envelope: (2.0, 2.0),
            r2: 1.0,
            degenerate: false,
        };
        // 178 degrees is 2 degrees away from 0 on the orientation circle
        let fits = vec![mk(178f64.to_radians()), mk(30f64.to_radians()), mk(90f64.to_radians()), mk(60f64.to_radians())];
        let atlas = build_atlas(&fits, 0.5).unwrap();
        let (f, d) = atlas.nearest_feature(0.0).unwrap();
        assert_eq!(f, 0);
        assert!(d.to_degrees() < 2.1);
    }
}
