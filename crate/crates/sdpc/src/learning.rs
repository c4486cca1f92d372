//! Dictionary learning: momentum SGD on the reconstruction term with
//! per-atom renormalization, alternated with inference over the training set.

use crate::error::{Result, SdpcError};
use crate::inference::{infer, total_loss, LayerLoss};
use crate::kernels::conv_weight_gradient;
use crate::model::{ConvDictionary, NetworkConfig};
use crate::ops::predict;
use crate::util::all_finite;
use ndarray::{Array3, Array4, ArrayView4, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// When the inference step sizes are recomputed during training.
///
/// Per-epoch suits small learning rates, where the Gram spectrum drifts
/// slowly. Aggressive rates move the spectrum enough within one epoch that
/// stale step sizes destabilize the solver; per-batch refresh covers that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefreshCadence {
    #[default]
    Epoch,
    Batch,
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    /// One learning rate per layer.
    pub eta_l: Vec<f32>,
    pub momentum: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub step_refresh: RefreshCadence,
}

impl TrainConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(SdpcError::Config("epochs must be at least 1".into()));
        }
        if self.eta_l.len() != num_layers {
            return Err(SdpcError::Config(format!(
                "expected {} learning rates, got {}",
                num_layers,
                self.eta_l.len()
            )));
        }
        if self.eta_l.iter().any(|&e| e < 0.0 || !e.is_finite()) {
            return Err(SdpcError::Config("learning rates must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SdpcError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(SdpcError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub per_layer: Vec<LayerLoss>,
    pub images: usize,
}

/// Gradient of the reconstruction term `1/2 ||below - D^T gamma||^2` with
/// respect to the dictionary atoms: the negative correlation of the residual
/// with the code.
pub fn reconstruction_gradient(
    dict: &ConvDictionary,
    gamma: &Array3<f32>,
    below: &Array3<f32>,
) -> Result<Array4<f32>> {
    let hw = {
        let d = below.dim();
        (d.1, d.2)
    };
    let prediction = predict(dict, gamma.view(), hw)?;
    let residual = below - &prediction;
    let corr = conv_weight_gradient(gamma.view(), residual.view(), dict.kernel_hw(), dict.stride)?;
    Ok(corr.mapv(|v| -v))
}

/// Applies one momentum-SGD step to a dictionary from a precomputed loss
/// gradient, then restores the unit-norm constraint on every atom.
///
/// Classical momentum: `v <- m*v - eta*grad`, `D <- D + v`.
pub fn apply_dictionary_update(
    dict: &mut ConvDictionary,
    gradient: ArrayView4<'_, f32>,
    eta: f32,
    momentum: f32,
    buffer: &mut Array4<f32>,
) -> Result<()> {
    if !all_finite(&gradient) {
        return Err(SdpcError::Numerical(
            "non-finite dictionary gradient; aborting epoch".into(),
        ));
    }
    if gradient.dim() != dict.atoms.dim() || buffer.dim() != dict.atoms.dim() {
        return Err(SdpcError::Config(
            "gradient and momentum buffer must match the dictionary shape".into(),
        ));
    }
    ndarray::Zip::from(&mut *buffer)
        .and(&gradient)
        .for_each(|v, &g| *v = momentum * *v - eta * g);
    dict.atoms += &*buffer;
    dict.normalize_atoms();
    Ok(())
}

/// Single-sample learning step: gradient from one `(code, layer input)` pair,
/// then the momentum update and renormalization.
pub fn dictionary_step(
    dict: &mut ConvDictionary,
    gamma: &Array3<f32>,
    below: &Array3<f32>,
    eta: f32,
    momentum: f32,
    buffer: &mut Array4<f32>,
) -> Result<()> {
    let grad = reconstruction_gradient(dict, gamma, below)?;
    apply_dictionary_update(dict, grad.view(), eta, momentum, buffer)
}

/// Recomputes every layer's inference step size for the given input geometry.
/// Called after dictionary updates move the Gram spectrum.
pub fn refresh_step_sizes(net: &mut NetworkConfig, input_dim: (usize, usize, usize)) -> Result<()> {
    let mut state = vec![None; net.num_layers()];
    refresh_step_sizes_warm(net, input_dim, &mut state)
}

/// Step-size refresh that carries the power-iteration eigenvectors between
/// calls, so repeated refreshes during training cost a handful of rounds.
pub fn refresh_step_sizes_warm(
    net: &mut NetworkConfig,
    input_dim: (usize, usize, usize),
    eigvecs: &mut Vec<Option<ndarray::Array3<f32>>>,
) -> Result<()> {
    let dims = net.layer_dims(input_dim)?;
    eigvecs.resize(net.num_layers(), None);
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let (_, h, w) = dims[i];
        let (sigma, v) = crate::ops::largest_gram_eigenvalue_from(
            &layer.dictionary,
            (h, w),
            eigvecs[i].as_ref(),
        )?;
        if sigma <= 0.0 {
            return Err(SdpcError::Numerical(
                "dictionary operator has zero spectral norm".into(),
            ));
        }
        layer.eta_c = Some((1.0 / sigma) as f32);
        eigvecs[i] = Some(v);
    }
    Ok(())
}

/// Alternates inference and dictionary learning over the training images.
///
/// Each epoch shuffles the image order with the run seed, infers every batch
/// in parallel, averages the per-layer gradients over the batch and applies
/// one momentum step per layer. Step sizes are refreshed once per epoch.
/// `on_epoch` fires after every epoch with the mean losses, which is where
/// the CLI hangs checkpoint writing.
pub fn train<F>(
    net: &mut NetworkConfig,
    data: &Array4<f32>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochReport>>
where
    F: FnMut(&EpochReport, &NetworkConfig) -> Result<()>,
{
    cfg.validate(net.num_layers())?;
    let n = data.dim().0;
    if n == 0 {
        return Err(SdpcError::Data("training set is empty".into()));
    }
    let input_dim = (data.dim().1, data.dim().2, data.dim().3);
    let mut eigvecs: Vec<Option<Array3<f32>>> = vec![None; net.num_layers()];
    refresh_step_sizes_warm(net, input_dim, &mut eigvecs)?;

    let mut momentum_buffers: Vec<Array4<f32>> = net
        .layers
        .iter()
        .map(|l| Array4::zeros(l.dictionary.atoms.dim()))
        .collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sums = vec![
            LayerLoss {
                reconstruction: 0.0,
                feedback: 0.0,
                sparsity: 0.0
            };
            net.num_layers()
        ];

        for batch in order.chunks(cfg.batch_size) {
            let outcomes: Vec<Result<(Vec<Array3<f32>>, Vec<LayerLoss>, Vec<Array4<f32>>)>> = batch
                .par_iter()
                .map(|&idx| {
                    let x = data.index_axis(Axis(0), idx).to_owned();
                    let result = infer(net, &x)?;
                    let gammas: Vec<Array3<f32>> =
                        result.gammas.into_iter().map(|g| g.data).collect();
                    let (losses, _) = total_loss(net, &gammas, &x)?;
                    let mut grads = Vec::with_capacity(net.num_layers());
                    for i in 0..net.num_layers() {
                        let below: &Array3<f32> = if i == 0 { &x } else { &gammas[i - 1] };
                        grads.push(reconstruction_gradient(
                            &net.layers[i].dictionary,
                            &gammas[i],
                            below,
                        )?);
                    }
                    Ok((gammas, losses, grads))
                })
                .collect();

            let mut grad_sums: Vec<Array4<f32>> = net
                .layers
                .iter()
                .map(|l| Array4::zeros(l.dictionary.atoms.dim()))
                .collect();
            let mut in_batch = 0usize;
            for outcome in outcomes {
                let (_, losses, grads) = outcome?;
                for (i, loss) in losses.iter().enumerate() {
                    loss_sums[i].reconstruction += loss.reconstruction;
                    loss_sums[i].feedback += loss.feedback;
                    loss_sums[i].sparsity += loss.sparsity;
                }
                for (sum, g) in grad_sums.iter_mut().zip(grads) {
                    *sum += &g;
                }
                in_batch += 1;
            }

            let scale = 1.0 / in_batch as f32;
            for (i, layer) in net.layers.iter_mut().enumerate() {
                grad_sums[i].mapv_inplace(|v| v * scale);
                apply_dictionary_update(
                    &mut layer.dictionary,
                    grad_sums[i].view(),
                    cfg.eta_l[i],
                    cfg.momentum,
                    &mut momentum_buffers[i],
                )?;
            }
            if cfg.step_refresh == RefreshCadence::Batch {
                refresh_step_sizes_warm(net, input_dim, &mut eigvecs)?;
            }
        }

        refresh_step_sizes_warm(net, input_dim, &mut eigvecs)?;

        let inv_n = 1.0 / n as f64;
        let report = EpochReport {
            epoch,
            per_layer: loss_sums
                .into_iter()
                .map(|l| LayerLoss {
                    reconstruction: l.reconstruction * inv_n,
                    feedback: l.feedback * inv_n,
                    sparsity: l.sparsity * inv_n,
                })
                .collect(),
            images: n,
        };
        on_epoch(&report, net)?;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerConfig;

    fn tiny_dict(seed: u64) -> ConvDictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConvDictionary::random(2, 1, 3, 1, &mut rng).unwrap()
    }

    #[test]
    fn zero_code_leaves_atoms_in_place() {
        let mut dict = tiny_dict(9);
        let before = dict.atoms.clone();
        let mut buf = Array4::zeros(dict.atoms.dim());
        let gamma = Array3::zeros((2, 4, 4));
        let below = Array3::from_elem((1, 6, 6), 0.3f32);
        dictionary_step(&mut dict, &gamma, &below, 0.1, 0.9, &mut buf).unwrap();
        // atoms were already unit-norm, so renormalization changes nothing
        for (a, b) in dict.atoms.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn perfect_reconstruction_has_zero_gradient() {
        let dict = tiny_dict(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gamma = Array3::from_shape_fn((2, 4, 4), |_| rng.random_range(0.0f32..1.0));
        let below = predict(&dict, gamma.view(), (6, 6)).unwrap();
        let grad = reconstruction_gradient(&dict, &gamma, &below).unwrap();
        for &g in grad.iter() {
            assert!(g.abs() < 1e-5, "gradient entry {g}");
        }
    }

    #[test]
    fn atoms_stay_unit_norm_after_updates() {
        let mut dict = tiny_dict(12);
        let mut buf = Array4::zeros(dict.atoms.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let gamma = Array3::from_shape_fn((2, 4, 4), |_| rng.random_range(0.0f32..1.0));
            let below = Array3::from_shape_fn((1, 6, 6), |_| rng.random_range(-1.0f32..1.0));
            dictionary_step(&mut dict, &gamma, &below, 0.2, 0.9, &mut buf).unwrap();
            for n in dict.atom_norms() {
                assert!((n - 1.0).abs() < 1e-6, "atom norm {n}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_never_moves_the_dictionary() {
        let dict = tiny_dict(14);
        let layer = LayerConfig::new(dict, 0.1).unwrap();
        let mut net = NetworkConfig::new(vec![layer], 0.0, 5e-3, 200).unwrap();
        let initial = net.layers[0].dictionary.atoms.clone();

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data = Array4::from_shape_fn((6, 1, 6, 6), |_| rng.random_range(-1.0f32..1.0));
        let cfg = TrainConfig {
            epochs: 3,
            eta_l: vec![0.0],
            momentum: 0.9,
            batch_size: 2,
            seed: 7,
            step_refresh: RefreshCadence::Epoch,
        };
        train(&mut net, &data, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(net.layers[0].dictionary.atoms, initial);
    }

    #[test]
    fn rejects_bad_training_config() {
        let cfg = TrainConfig {
            epochs: 0,
            eta_l: vec![0.1],
            momentum: 0.9,
            batch_size: 4,
            seed: 0,
            step_refresh: RefreshCadence::Epoch,
        };
        assert!(cfg.validate(1).is_err());
        let cfg = TrainConfig {
            epochs: 1,
            eta_l: vec![0.1, 0.2],
            momentum: 1.0,
            batch_size: 4,
            seed: 0,
            step_refresh: RefreshCadence::Epoch,
        };
        assert!(cfg.validate(2).is_err());
    }
}
