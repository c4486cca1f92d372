//! Best-effort PNG rendering. The CSVs are the contract; these images exist
//! for eyeballing runs.

use crate::analysis::interaction::InteractionMap;
use crate::data::imagedir::{normalize_for_display, save_png};
use crate::error::Result;
use ndarray::{Array3, Array4, Axis};
use std::path::Path;

/// Tiles a set of atoms into a mosaic with 1-pixel separators, each atom
/// min-max normalized for display. `order` gives the tile sequence.
pub fn atom_mosaic(atoms: &Array4<f32>, order: &[usize], columns: usize) -> Array3<f32> {
    let (_, c, kh, kw) = atoms.dim();
    let n = order.len();
    let cols = columns.max(1);
    let rows = n.div_ceil(cols);
    let (th, tw) = (kh + 1, kw + 1);
    let mut canvas = Array3::from_elem((c, rows * th + 1, cols * tw + 1), 0.5f32);
    for (slot, &feature) in order.iter().enumerate() {
        let tile = normalize_for_display(&atoms.index_axis(Axis(0), feature).to_owned());
        let (r0, c0) = ((slot / cols) * th + 1, (slot % cols) * tw + 1);
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    canvas[(ch, r0 + i, c0 + j)] = tile[(ch, i, j)];
                }
            }
        }
    }
    canvas
}

pub fn save_mosaic(path: &Path, atoms: &Array4<f32>, order: &[usize], columns: usize) -> Result<()> {
    save_png(path, &atom_mosaic(atoms, order, columns))
}

/// Renders an interaction map as oriented segments, one tile per cell,
/// brightness following the magnitude between the given saturation bounds.
pub fn render_interaction_map(
    map: &InteractionMap,
    lo: f64,
    hi: f64,
    values: Option<&ndarray::Array2<f64>>,
) -> Array3<f32> {
    const TILE: usize = 15;
    let side = 2 * map.radius + 1;
    let px = side * TILE;
    let mut canvas = Array3::from_elem((1, px, px), 1.0f32);
    for r in 0..side {
        for c in 0..side {
            let value = match values {
                Some(v) => v[(r, c)],
                None => map.magnitude[(r, c)],
            };
            let t = ((value - lo) / (hi - lo)).clamp(0.0, 1.0) as f32;
            let theta = map.theta_bar[(r, c)];
            let (cy, cx) = (r * TILE + TILE / 2, c * TILE + TILE / 2);
            // draw a short segment through the tile center at angle theta
            let (dy, dx) = (theta.sin(), theta.cos());
            let half = (TILE / 2 - 1) as f64;
            let steps = 2 * TILE;
            for s in 0..=steps {
                let a = (s as f64 / steps as f64) * 2.0 - 1.0;
                let y = cy as f64 + a * half * dy;
                let x = cx as f64 + a * half * dx;
                let (yi, xi) = (y.round() as isize, x.round() as isize);
                if yi >= 0 && xi >= 0 && (yi as usize) < px && (xi as usize) < px {
                    canvas[(0, yi as usize, xi as usize)] = 1.0 - t;
                }
            }
        }
    }
    canvas
}

pub fn save_interaction_map(
    path: &Path,
    map: &InteractionMap,
    lo: f64,
    hi: f64,
    values: Option<&ndarray::Array2<f64>>,
) -> Result<()> {
    save_png(path, &render_interaction_map(map, lo, hi, values))
}

/// Stacks image tiles into a grid canvas (rows x cols), each tile display
/// normalized; used for the denoising panels.
pub fn image_grid(tiles: &[Vec<Array3<f32>>]) -> Array3<f32> {
    let rows = tiles.len();
    let cols = tiles.iter().map(Vec::len).max().unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Array3::zeros((1, 1, 1));
    }
    let (c, h, w) = tiles[0][0].dim();
    let (th, tw) = (h + 2, w + 2);
    let mut canvas = Array3::from_elem((c, rows * th + 2, cols * tw + 2), 1.0f32);
    for (r, row) in tiles.iter().enumerate() {
        for (k, tile) in row.iter().enumerate() {
            let norm = normalize_for_display(tile);
            let (r0, c0) = (r * th + 2, k * tw + 2);
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        canvas[(ch, r0 + i, c0 + j)] = norm[(ch, i, j)];
                    }
                }
            }
        }
    }
    canvas
}
