//! ZCA whitening, fit on the training split only.
//!
//! Small inputs (at most 256 dimensions when flattened) get the exact
//! treatment: a full covariance, its eigendecomposition and the symmetric
//! whitening matrix. Images are handled convolutionally: the ZCA transform is
//! fit on a subsample of local patches and the rows belonging to the patch
//! center become a whitening filter bank, applied everywhere with reflect
//! padding. By stationarity the center row of a patch ZCA gives each output
//! pixel unit variance, which is the property the model's sparsity penalties
//! are calibrated against.

use super::ImageBatch;
use crate::checkpoint::{NamedTensor, TensorContainer};
use crate::eig::eigh;
use crate::error::{Result, SdpcError};
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Flattened-dimension ceiling for the exact path.
pub const FULL_DIM_LIMIT: usize = 256;

/// Whitening fit parameters.
#[derive(Debug, Clone, Copy)]
pub struct WhitenConfig {
    /// Eigenvalue floor as a fraction of `trace/dim`.
    pub epsilon_scale: f64,
    /// Patch side for the convolutional path.
    pub patch: usize,
    /// Patch subsample ceiling for the convolutional path.
    pub max_patches: usize,
    pub seed: u64,
}

impl Default for WhitenConfig {
    fn default() -> Self {
        Self {
            epsilon_scale: 1e-5,
            patch: 9,
            max_patches: 100_000,
            seed: 0,
        }
    }
}

/// A fitted whitening transform.
#[derive(Debug, Clone)]
pub enum WhiteningOperator {
    /// Exact ZCA on flattened inputs.
    Full {
        mean: Array1<f32>,
        transform: Array2<f32>,
        epsilon: f32,
        shape: (usize, usize, usize),
    },
    /// Patch-ZCA center rows applied as a convolution.
    Convolutional {
        /// `[C_out, C_in, P, P]` filter bank.
        filter: Array4<f32>,
        /// Per-output-channel offset absorbing the patch mean.
        bias: Array1<f32>,
        epsilon: f32,
    },
}

/// Fits ZCA whitening on a training batch.
pub fn fit_whitening(train: &ImageBatch, cfg: &WhitenConfig) -> Result<WhiteningOperator> {
    if train.is_empty() {
        return Err(SdpcError::Data("cannot fit whitening on an empty batch".into()));
    }
    let (_, c, h, w) = train.data.dim();
    if c * h * w <= FULL_DIM_LIMIT {
        fit_full(train, cfg)
    } else {
        fit_convolutional(train, cfg)
    }
}

fn zca_from_covariance(cov: &Array2<f64>, epsilon_scale: f64) -> Result<(Array2<f64>, f64)> {
    let dim = cov.nrows();
    let trace: f64 = cov.diag().sum();
    let epsilon = (epsilon_scale * trace / dim as f64).max(f64::MIN_POSITIVE);
    let (values, vectors) = eigh(cov)?;
    let scaled = Array2::from_diag(&values.mapv(|l| 1.0 / (l.max(0.0) + epsilon).sqrt()));
    Ok((vectors.dot(&scaled).dot(&vectors.t()), epsilon))
}

fn fit_full(train: &ImageBatch, cfg: &WhitenConfig) -> Result<WhiteningOperator> {
    let (n, c, h, w) = train.data.dim();
    let dim = c * h * w;
    let flat = train
        .data
        .to_shape((n, dim))
        .expect("batch flattens to matrix")
        .mapv(|v| v as f64);

    let mean = flat.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &flat - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / n as f64;
    let (transform, epsilon) = zca_from_covariance(&cov, cfg.epsilon_scale)?;

    Ok(WhiteningOperator::Full {
        mean: mean.mapv(|v| v as f32),
        transform: transform.mapv(|v| v as f32),
        epsilon: epsilon as f32,
        shape: (c, h, w),
    })
}

fn fit_convolutional(train: &ImageBatch, cfg: &WhitenConfig) -> Result<WhiteningOperator> {
    let (n, c, h, w) = train.data.dim();
    let p = cfg.patch;
    if p % 2 == 0 || p == 0 {
        return Err(SdpcError::Config(format!("whitening patch must be odd, got {p}")));
    }
    if h < p || w < p {
        return Err(SdpcError::Data(format!(
            "images {h}x{w} smaller than the whitening patch {p}"
        )));
    }
    let dim = c * p * p;

    // seeded patch subsample
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total_positions = n * (h - p + 1) * (w - p + 1);
    let count = cfg.max_patches.min(total_positions).max(dim * 4);
    let mut sum = Array1::<f64>::zeros(dim);
    let mut outer = Array2::<f64>::zeros((dim, dim));
    let mut patch_vec = Array1::<f64>::zeros(dim);
    for _ in 0..count {
        let img = rng.random_range(0..n);
        let top = rng.random_range(0..=(h - p));
        let left = rng.random_range(0..=(w - p));
        let mut k = 0;
        for ci in 0..c {
            for di in 0..p {
                for dj in 0..p {
                    patch_vec[k] = train.data[(img, ci, top + di, left + dj)] as f64;
                    k += 1;
                }
            }
        }
        sum += &patch_vec;
        for i in 0..dim {
            let pi = patch_vec[i];
            for j in i..dim {
                outer[(i, j)] += pi * patch_vec[j];
            }
        }
    }
    let inv = 1.0 / count as f64;
    let mean = sum.mapv(|v| v * inv);
    let mut cov = Array2::<f64>::zeros((dim, dim));
    for i in 0..dim {
        for j in i..dim {
            let v = outer[(i, j)] * inv - mean[i] * mean[j];
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let (zca, epsilon) = zca_from_covariance(&cov, cfg.epsilon_scale)?;

    // rows of the transform belonging to each channel's center pixel
    let center = p / 2;
    let mut filter = Array4::<f32>::zeros((c, c, p, p));
    let mut bias = Array1::<f32>::zeros(c);
    for c_out in 0..c {
        let row = (c_out * p + center) * p + center;
        let mut b = 0.0f64;
        let mut k = 0;
        for c_in in 0..c {
            for di in 0..p {
                for dj in 0..p {
                    filter[(c_out, c_in, di, dj)] = zca[(row, k)] as f32;
                    b += zca[(row, k)] * mean[k];
                    k += 1;
                }
            }
        }
        bias[c_out] = b as f32;
    }

    Ok(WhiteningOperator::Convolutional {
        filter,
        bias,
        epsilon: epsilon as f32,
    })
}

fn reflect(idx: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * len - 2 - i;
    }
    i.clamp(0, len - 1) as usize
}

fn apply_conv_one(
    image: &Array3<f32>,
    filter: &Array4<f32>,
    bias: &Array1<f32>,
) -> Array3<f32> {
    let (c, h, w) = image.dim();
    let p = filter.dim().2;
    let half = (p / 2) as isize;
    let mut out = Array3::zeros((c, h, w));
    for c_out in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0f64;
                for c_in in 0..c {
                    for di in 0..p {
                        let ii = reflect(i as isize + di as isize - half, h);
                        for dj in 0..p {
                            let jj = reflect(j as isize + dj as isize - half, w);
                            acc += filter[(c_out, c_in, di, dj)] as f64
                                * image[(c_in, ii, jj)] as f64;
                        }
                    }
                }
                out[(c_out, i, j)] = acc as f32 - bias[c_out];
            }
        }
    }
    out
}

/// Applies a fitted whitening operator to a batch.
pub fn apply_whitening(op: &WhiteningOperator, batch: &ImageBatch) -> Result<ImageBatch> {
    match op {
        WhiteningOperator::Full {
            mean,
            transform,
            shape,
            ..
        } => {
            let (n, c, h, w) = batch.data.dim();
            if (c, h, w) != *shape {
                return Err(SdpcError::Data(format!(
                    "whitening was fit on {shape:?} images, got {:?}",
                    (c, h, w)
                )));
            }
            let dim = c * h * w;
            let flat = batch
                .data
                .to_shape((n, dim))
                .expect("batch flattens to matrix")
                .to_owned();
            let centered = &flat - &mean.view().insert_axis(Axis(0));
            let out2 = centered.dot(&transform.t());
            let data = out2
                .into_shape_with_order((n, c, h, w))
                .expect("matrix reshapes to batch");
            ImageBatch::new(data, batch.ids.clone())
        }
        WhiteningOperator::Convolutional { filter, bias, .. } => {
            let images: Vec<Array3<f32>> = (0..batch.len())
                .into_par_iter()
                .map(|i| apply_conv_one(&batch.image(i), filter, bias))
                .collect();
            let mut data = Array4::zeros(batch.data.dim());
            for (i, img) in images.iter().enumerate() {
                data.index_axis_mut(Axis(0), i).assign(img);
            }
            ImageBatch::new(data, batch.ids.clone())
        }
    }
}

/// Serializes the operator into a tensor container under `whiten.*` keys.
pub fn write_whitening(container: &mut TensorContainer, op: &WhiteningOperator) {
    match op {
        WhiteningOperator::Full {
            mean,
            transform,
            epsilon,
            shape,
        } => {
            container.set("whiten.kind", "full");
            container.set("whiten.epsilon", epsilon);
            container.set("whiten.shape", format!("{},{},{}", shape.0, shape.1, shape.2));
            container.push_tensor(NamedTensor::from_array1("whiten.mean", mean));
            container.push_tensor(NamedTensor::from_array2("whiten.transform", transform));
        }
        WhiteningOperator::Convolutional { filter, bias, epsilon } => {
            container.set("whiten.kind", "conv");
            container.set("whiten.epsilon", epsilon);
            container.push_tensor(NamedTensor::from_array4("whiten.filter", filter));
            container.push_tensor(NamedTensor::from_array1("whiten.bias", bias));
        }
    }
}

/// Restores an operator written by [`write_whitening`].
pub fn read_whitening(container: &TensorContainer) -> Result<WhiteningOperator> {
    match container.get("whiten.kind")? {
        "full" => {
            let shape_text = container.get("whiten.shape")?;
            let parts: Vec<usize> = shape_text
                .split(',')
                .map(|s| s.parse().map_err(|_| SdpcError::Format {
                    path: "<container>".into(),
                    detail: format!("bad whiten.shape '{shape_text}'"),
                }))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(SdpcError::Format {
                    path: "<container>".into(),
                    detail: "whiten.shape needs three dims".into(),
                });
            }
            Ok(WhiteningOperator::Full {
                mean: container.tensor("whiten.mean")?.to_array1()?,
                transform: container.tensor("whiten.transform")?.to_array2()?,
                epsilon: container.get_parsed("whiten.epsilon")?,
                shape: (parts[0], parts[1], parts[2]),
            })
        }
        "conv" => Ok(WhiteningOperator::Convolutional {
            filter: container.tensor("whiten.filter")?.to_array4()?,
            bias: container.tensor("whiten.bias")?.to_array1()?,
            epsilon: container.get_parsed("whiten.epsilon")?,
        }),
        other => Err(SdpcError::Format {
            path: "<container>".into(),
            detail: format!("unknown whitening kind '{other}'"),
        }),
    }
}
