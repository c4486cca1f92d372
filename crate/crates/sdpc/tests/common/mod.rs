//! Shared oracle machinery for the integration and acceptance tests.
//!
//! Everything here is deliberately brute force and kept independent of the
//! library's convolution path: dense Toeplitz materialization of the
//! prediction operator, a cyclic coordinate-descent solver for the
//! non-negative LASSO, and direct objective evaluation, all in f64.

#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, Array4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Dense matrix of the transposed-convolution (prediction) operator: maps a
/// flattened `[F, hc, wc]` code to a flattened `[C, h, w]` image.
pub fn materialize_predict(
    atoms: &Array4<f64>,
    stride: usize,
    code_hw: (usize, usize),
    out_hw: (usize, usize),
) -> Array2<f64> {
    let (f, c, kh, kw) = atoms.dim();
    let (hc, wc) = code_hw;
    let (h, w) = out_hw;
    let mut m = Array2::zeros((c * h * w, f * hc * wc));
    for fi in 0..f {
        for u in 0..hc {
            for v in 0..wc {
                let col = (fi * hc + u) * wc + v;
                for ci in 0..c {
                    for di in 0..kh {
                        for dj in 0..kw {
                            let row = (ci * h + (u * stride + di)) * w + (v * stride + dj);
                            m[(row, col)] += atoms[(fi, ci, di, dj)];
                        }
                    }
                }
            }
        }
    }
    m
}

pub fn flatten3(t: &Array3<f32>) -> Array1<f64> {
    Array1::from_iter(t.iter().map(|&v| v as f64))
}

pub fn atoms_to_f64(atoms: &Array4<f32>) -> Array4<f64> {
    atoms.mapv(|v| v as f64)
}

/// Non-negative LASSO objective `0.5 ||x - A g||^2 + lambda ||g||_1`.
pub fn nn_lasso_objective(a: &Array2<f64>, x: &Array1<f64>, gamma: &Array1<f64>, lambda: f64) -> f64 {
    let residual = x - &a.dot(gamma);
    0.5 * residual.dot(&residual) + lambda * gamma.iter().map(|g| g.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for the non-negative LASSO. Returns the
/// minimizer; panics if the column norms vanish.
pub fn cd_nonneg_lasso(
    a: &Array2<f64>,
    x: &Array1<f64>,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Array1<f64> {
    let (_, n) = a.dim();
    let col_norms: Vec<f64> = (0..n).map(|j| a.column(j).dot(&a.column(j))).collect();
    let mut gamma = Array1::<f64>::zeros(n);
    let mut residual = x.clone();
    for _ in 0..max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..n {
            if col_norms[j] <= 0.0 {
                continue;
            }
            let old = gamma[j];
            let rho = a.column(j).dot(&residual) + col_norms[j] * old;
            let new = ((rho - lambda) / col_norms[j]).max(0.0);
            if new != old {
                let delta = new - old;
                residual.scaled_add(-delta, &a.column(j));
                gamma[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            break;
        }
    }
    gamma
}

/// Deterministic random tensors for test instances.
pub fn random3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize), lo: f32, hi: f32) -> Array3<f32> {
    Array3::from_shape_fn(dim, |_| rng.random_range(lo..hi))
}

pub fn random4_f64(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}

/// A one-layer network with a random unit-atom dictionary and computed step
/// size.
pub fn one_layer_net(
    seed: u64,
    features: usize,
    channels: usize,
    kernel: usize,
    stride: usize,
    lambda: f32,
    input_hw: (usize, usize),
) -> sdpc::NetworkConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = sdpc::ConvDictionary::random(features, channels, kernel, stride, &mut rng).unwrap();
    let mut layer = sdpc::LayerConfig::new(dict, lambda).unwrap();
    layer.eta_c = Some(sdpc::ops::compute_step_size(&layer.dictionary, input_hw).unwrap());
    sdpc::NetworkConfig::new(vec![layer], 0.0, 5e-3, 500).unwrap()
}

/// The four spatial generators of the synthetic dictionary-recovery task:
/// two oriented bars, a diagonal pair and a center-surround blob, all unit
/// norm and non-negative-friendly.
pub fn recovery_generators(kernel: usize) -> Array4<f32> {
    let k = kernel;
    let mut atoms = Array4::<f32>::zeros((4, 1, k, k));
    let mid = k / 2;
    for i in 0..k {
        atoms[(0, 0, mid, i)] = 1.0; // horizontal bar
        atoms[(1, 0, i, mid)] = 1.0; // vertical bar
        atoms[(2, 0, i, i)] = 1.0; // diagonal
    }
    // center-surround blob
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f32 - mid as f32).powi(2) + (j as f32 - mid as f32).powi(2);
            atoms[(3, 0, i, j)] = (-d2 / 2.0).exp();
        }
    }
    // unit-normalize each generator
    for f in 0..4 {
        let norm: f32 = atoms
            .index_axis(ndarray::Axis(0), f)
            .iter()
            .map(|v| v * v)
            .sum::<f32>()
            .sqrt();
        atoms
            .index_axis_mut(ndarray::Axis(0), f)
            .mapv_inplace(|v| v / norm);
    }
    atoms
}

/// Images composed of a few positively weighted generator placements,
/// the identifiable sparse-coding ground truth for dictionary recovery.
pub fn recovery_images(
    generators: &Array4<f32>,
    n: usize,
    image_side: usize,
    seed: u64,
) -> ndarray::Array4<f32> {
    let (_, _, k, _) = generators.dim();
    let grid = image_side - k + 1;
    let mut data = ndarray::Array4::<f32>::zeros((n, 1, image_side, image_side));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let placements = rng.random_range(3..=5);
        for _ in 0..placements {
            let g = rng.random_range(0..4usize);
            let (r0, c0) = (rng.random_range(0..grid), rng.random_range(0..grid));
            let amp: f32 = rng.random_range(0.5..1.5);
            for di in 0..k {
                for dj in 0..k {
                    data[(i, 0, r0 + di, c0 + dj)] += amp * generators[(g, 0, di, dj)];
                }
            }
        }
    }
    data
}

/// Cosine similarity between the best-matching atom and each generator.
pub fn generator_match(atoms: &Array4<f32>, generators: &Array4<f32>) -> Vec<f64> {
    let (na, _, _, _) = atoms.dim();
    let (ng, _, _, _) = generators.dim();
    (0..ng)
        .map(|g| {
            let gen: Vec<f64> = generators
                .index_axis(ndarray::Axis(0), g)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let gnorm = gen.iter().map(|v| v * v).sum::<f64>().sqrt();
            (0..na)
                .map(|a| {
                    let atom: Vec<f64> = atoms
                        .index_axis(ndarray::Axis(0), a)
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    let anorm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = gen.iter().zip(&atom).map(|(x, y)| x * y).sum();
                    (dot / (gnorm * anorm)).abs()
                })
                .fold(0.0f64, f64::max)
        })
        .collect()
}
