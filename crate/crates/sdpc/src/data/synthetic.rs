//! Synthetic contour-rich images.
//!
//! Each image is a smooth color gradient carrying two stroke populations: a
//! dense field of short, faint strokes (the texture every natural photograph
//! has) and a handful of long, salient segments and circular arcs with a
//! Gaussian cross-section. The salient strokes provide the elongated,
//! locally co-linear and co-circular structure the orientation analyses feed
//! on; the texture keeps local activity statistics dense, so marginals are
//! meaningful everywhere. Together they make a deterministic stand-in for
//! natural photographs in tests and examples.

use super::ImageBatch;
use ndarray::Array4;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

struct Stroke {
    kind: StrokeKind,
    width: f32,
    /// per-channel signed contrast
    contrast: Vec<f32>,
}

enum StrokeKind {
    Segment { x0: f32, y0: f32, x1: f32, y1: f32 },
    Arc { cx: f32, cy: f32, radius: f32, from: f32, span: f32 },
}

impl Stroke {
    fn distance(&self, x: f32, y: f32) -> f32 {
        match self.kind {
            StrokeKind::Segment { x0, y0, x1, y1 } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (x0 + t * dx, y0 + t * dy);
                ((x - px).powi(2) + (y - py).powi(2)).sqrt()
            }
            StrokeKind::Arc { cx, cy, radius, from, span } => {
                let (rx, ry) = (x - cx, y - cy);
                let r = (rx * rx + ry * ry).sqrt();
                let mut angle = ry.atan2(rx) - from;
                angle = angle.rem_euclid(2.0 * std::f32::consts::PI);
                if angle <= span {
                    (r - radius).abs()
                } else {
                    // distance to the nearer arc endpoint
                    let end = |a: f32| {
                        let (ex, ey) = (cx + radius * a.cos(), cy + radius * a.sin());
                        ((x - ex).powi(2) + (y - ey).powi(2)).sqrt()
                    };
                    end(from).min(end(from + span))
                }
            }
        }
    }
}

/// Generates `n` contour images of shape `[channels, h, w]` in `[0, 1]`.
/// Image `i` depends only on `(seed, i)`.
pub fn contour_images(n: usize, h: usize, w: usize, channels: usize, seed: u64) -> ImageBatch {
    let mut data = Array4::zeros((n, channels, h, w));
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        render_one(&mut rng, &mut data, i, h, w, channels);
    }
    let ids = (0..n).map(|i| format!("contour-{i:05}")).collect();
    ImageBatch::new(data, ids).expect("generator output is finite")
}

fn render_one(
    rng: &mut ChaCha8Rng,
    data: &mut Array4<f32>,
    index: usize,
    h: usize,
    w: usize,
    channels: usize,
) {
    let min_side = h.min(w) as f32;

    // smooth background gradient
    let base: Vec<f32> = (0..channels).map(|_| rng.random_range(0.35..0.65)).collect();
    let gx: Vec<f32> = (0..channels).map(|_| rng.random_range(-0.15..0.15)).collect();
    let gy: Vec<f32> = (0..channels).map(|_| rng.random_range(-0.15..0.15)).collect();

    let mut strokes = Vec::new();

    // dense texture: short faint strokes everywhere
    let texture_count = (h * w) / 24;
    for _ in 0..texture_count {
        let width = rng.random_range(0.7..1.2f32);
        let sign: f32 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let strength = rng.random_range(0.05..0.16f32);
        let contrast: Vec<f32> = (0..channels)
            .map(|_| sign * strength * rng.random_range(0.7..1.0))
            .collect();
        let x0 = rng.random_range(0.0..w as f32);
        let y0 = rng.random_range(0.0..h as f32);
        let angle = rng.random_range(0.0..std::f32::consts::PI);
        let len = rng.random_range(2.5..7.0f32);
        strokes.push(Stroke {
            kind: StrokeKind::Segment {
                x0,
                y0,
                x1: x0 + len * angle.cos(),
                y1: y0 + len * angle.sin(),
            },
            width,
            contrast,
        });
    }

    // salient contours: long segments and arcs
    let stroke_count = rng.random_range(5..=9);
    for _ in 0..stroke_count {
        let width = rng.random_range(0.9..1.8f32);
        let sign: f32 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let strength = rng.random_range(0.25..0.55f32);
        let contrast: Vec<f32> = (0..channels)
            .map(|_| sign * strength * rng.random_range(0.7..1.0))
            .collect();
        let kind = if rng.random_bool(0.5) {
            let x0 = rng.random_range(-0.2 * w as f32..1.2 * w as f32);
            let y0 = rng.random_range(-0.2 * h as f32..1.2 * h as f32);
            let angle = rng.random_range(0.0..std::f32::consts::PI);
            let len = rng.random_range(0.5..1.3) * min_side;
            StrokeKind::Segment {
                x0,
                y0,
                x1: x0 + len * angle.cos(),
                y1: y0 + len * angle.sin(),
            }
        } else {
            StrokeKind::Arc {
                cx: rng.random_range(0.0..w as f32),
                cy: rng.random_range(0.0..h as f32),
                radius: rng.random_range(0.25..0.7) * min_side,
                from: rng.random_range(0.0..2.0 * std::f32::consts::PI),
                span: rng.random_range(1.0..3.5f32),
            }
        };
        strokes.push(Stroke {
            kind,
            width,
            contrast,
        });
    }

    for row in 0..h {
        for col in 0..w {
            let (x, y) = (col as f32, row as f32);
            let mut px: Vec<f32> = (0..channels)
                .map(|c| base[c] + gx[c] * (x / w as f32 - 0.5) + gy[c] * (y / h as f32 - 0.5))
                .collect();
            for stroke in &strokes {
                let d = stroke.distance(x, y);
                if d < 4.0 * stroke.width {
                    let profile = (-d * d / (2.0 * stroke.width * stroke.width)).exp();
                    for c in 0..channels {
                        px[c] += stroke.contrast[c] * profile;
                    }
                }
            }
            for c in 0..channels {
                data[(index, c, row, col)] = px[c].clamp(0.0, 1.0);
            }
        }
    }
}
