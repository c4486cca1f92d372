//! Dataset ingestion, preprocessing and corruption.

pub mod imagedir;
pub mod lcn;
pub mod stl10;
pub mod synthetic;
pub mod whiten;

use crate::error::{Result, SdpcError};
use ndarray::{Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// A batch of images `[N, C, H, W]` with their source identifiers.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub data: Array4<f32>,
    pub ids: Vec<String>,
}

impl ImageBatch {
    pub fn new(data: Array4<f32>, ids: Vec<String>) -> Result<Self> {
        if data.dim().0 != ids.len() {
            return Err(SdpcError::Data(format!(
                "{} images but {} ids",
                data.dim().0,
                ids.len()
            )));
        }
        if !crate::util::all_finite(&data) {
            return Err(SdpcError::Data("batch contains non-finite values".into()));
        }
        Ok(Self { data, ids })
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, index: usize) -> Array3<f32> {
        self.data.index_axis(Axis(0), index).to_owned()
    }

    /// First `n` images (all of them if `n` is zero or exceeds the batch).
    pub fn take(&self, n: usize) -> ImageBatch {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        ImageBatch {
            data: self.data.slice(ndarray::s![..n, .., .., ..]).to_owned(),
            ids: self.ids[..n].to_vec(),
        }
    }
}

/// Additive Gaussian corruption parameters.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub sigma: f32,
    pub seed: u64,
}

/// Adds zero-mean Gaussian noise of standard deviation `spec.sigma`.
///
/// Noise is drawn from a stream keyed by `(seed, image index)`, so corrupting
/// the same image twice, or the same batch in a different order, gives
/// identical samples.
pub fn add_noise(batch: &ImageBatch, spec: NoiseSpec) -> Result<ImageBatch> {
    if spec.sigma < 0.0 || !spec.sigma.is_finite() {
        return Err(SdpcError::Config(format!(
            "noise sigma must be finite and >= 0, got {}",
            spec.sigma
        )));
    }
    if spec.sigma == 0.0 {
        return Ok(batch.clone());
    }
    let mut data = batch.data.clone();
    let per_image = data.dim().1 * data.dim().2 * data.dim().3;
    for (index, mut img) in data.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let noise = crate::util::standard_normal(&mut rng, per_image);
        for (v, n) in img.iter_mut().zip(noise) {
            *v += spec.sigma * n;
        }
    }
    ImageBatch::new(data, batch.ids.clone())
}

/// Adds noise to a single image as [`add_noise`] would at `index` within a
/// batch.
pub fn add_noise_single(image: &Array3<f32>, spec: NoiseSpec, index: usize) -> Array3<f32> {
    if spec.sigma == 0.0 {
        return image.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let noise = crate::util::standard_normal(&mut rng, image.len());
    let mut out = image.clone();
    for (v, n) in out.iter_mut().zip(noise) {
        *v += spec.sigma * n;
    }
    out
}

/// Writes a split manifest: one image id per line.
pub fn write_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Splits a batch into leading train and following test segments.
/// The two manifests never share an id.
pub fn split_batch(batch: &ImageBatch, train_n: usize, test_n: usize) -> Result<(ImageBatch, ImageBatch)> {
    if train_n + test_n > batch.len() {
        return Err(SdpcError::Data(format!(
            "cannot split {} images into {train_n} train + {test_n} test",
            batch.len()
        )));
    }
    let train = ImageBatch {
        data: batch.data.slice(ndarray::s![..train_n, .., .., ..]).to_owned(),
        ids: batch.ids[..train_n].to_vec(),
    };
    let test = ImageBatch {
        data: batch
            .data
            .slice(ndarray::s![train_n..train_n + test_n, .., .., ..])
            .to_owned(),
        ids: batch.ids[train_n..train_n + test_n].to_vec(),
    };
    Ok((train, test))
}
