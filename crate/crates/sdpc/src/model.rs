//! Domain types for the layered sparse-coding network.

use crate::error::{Result, SdpcError};
use crate::kernels::conv_output_dim;
use crate::util::{all_finite, l2_norm};
use ndarray::{Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;

/// A layer's neural state: non-negative activations on a
/// `[features, height, width]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMap {
    pub data: Array3<f32>,
}

impl ActivityMap {
    /// Wraps a tensor, checking the non-negativity and finiteness invariants.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if !all_finite(&data) {
            return Err(SdpcError::Numerical(
                "activity map contains non-finite values".into(),
            ));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(SdpcError::Numerical(
                "activity map contains negative values".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: (usize, usize, usize)) -> Self {
        Self {
            data: Array3::zeros(dim),
        }
    }

    /// Fraction of strictly positive coefficients.
    pub fn active_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let active = self.data.iter().filter(|&&v| v > 0.0).count();
        active as f64 / self.data.len() as f64
    }
}

/// Signed difference between a layer input and its top-down reconstruction.
#[derive(Debug, Clone)]
pub struct PredictionError {
    pub data: Array3<f32>,
}

impl PredictionError {
    /// `input - prediction`, elementwise. Shapes must match.
    pub fn between(input: &Array3<f32>, prediction: &Array3<f32>) -> Result<Self> {
        if input.dim() != prediction.dim() {
            return Err(SdpcError::Config(format!(
                "prediction error shapes differ: {:?} vs {:?}",
                input.dim(),
                prediction.dim()
            )));
        }
        Ok(Self {
            data: input - prediction,
        })
    }
}

/// Convolutional synaptic weights: `[features, in_channels, kh, kw]` atoms
/// held at unit L2 norm, applied with a fixed spatial stride.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDictionary {
    pub atoms: Array4<f32>,
    pub stride: usize,
}

impl ConvDictionary {
    pub fn new(atoms: Array4<f32>, stride: usize) -> Result<Self> {
        let (_, _, kh, kw) = atoms.dim();
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(SdpcError::Config(
                "kernel extents and stride must be at least 1".into(),
            ));
        }
        Ok(Self { atoms, stride })
    }

    /// Standard-normal initialization followed by per-atom normalization, so
    /// the unit-norm invariant holds from the first observable state.
    pub fn random(
        features: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let normal = crate::util::standard_normal(rng, features * in_channels * kernel * kernel);
        let atoms = Array4::from_shape_vec((features, in_channels, kernel, kernel), normal)
            .expect("draw matches requested shape");
        let mut dict = Self::new(atoms, stride)?;
        dict.normalize_atoms();
        Ok(dict)
    }

    pub fn num_features(&self) -> usize {
        self.atoms.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.atoms.dim().1
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        let d = self.atoms.dim();
        (d.2, d.3)
    }

    /// Rescales every atom to unit L2 norm. Zero atoms are left untouched.
    pub fn normalize_atoms(&mut self) {
        for mut atom in self.atoms.axis_iter_mut(Axis(0)) {
            let norm = l2_norm(&atom) as f32;
            if norm > 0.0 {
                atom.mapv_inplace(|v| v / norm);
            }
        }
    }

    pub fn atom_norms(&self) -> Vec<f64> {
        self.atoms.axis_iter(Axis(0)).map(|a| l2_norm(&a)).collect()
    }
}

/// One layer of the network: its dictionary, sparsity penalty and the
/// inference step size (set by [`NetworkConfig::compute_step_sizes`]).
#[derive(Debug, Clone)]
pub struct LayerConfig {
    pub dictionary: ConvDictionary,
    pub lambda: f32,
    pub eta_c: Option<f32>,
}

impl LayerConfig {
    pub fn new(dictionary: ConvDictionary, lambda: f32) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(SdpcError::Config(format!(
                "sparsity penalty must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self {
            dictionary,
            lambda,
            eta_c: None,
        })
    }

    pub fn step_size(&self) -> Result<f32> {
        self.eta_c.ok_or_else(|| {
            SdpcError::Config("inference step size not computed for this layer".into())
        })
    }
}

/// Network-level configuration: the layer stack, the feedback strength, the
/// stability threshold and a safety cap on inference iterations.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub layers: Vec<LayerConfig>,
    pub k_fb: f32,
    pub t_stab: f32,
    pub max_iters: usize,
}

impl NetworkConfig {
    pub fn new(layers: Vec<LayerConfig>, k_fb: f32, t_stab: f32, max_iters: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(SdpcError::Config("network needs at least one layer".into()));
        }
        if k_fb < 0.0 || !k_fb.is_finite() {
            return Err(SdpcError::Config(format!(
                "feedback strength must be finite and non-negative, got {k_fb}"
            )));
        }
        if t_stab <= 0.0 || !t_stab.is_finite() {
            return Err(SdpcError::Config(format!(
                "stability threshold must be positive, got {t_stab}"
            )));
        }
        if max_iters == 0 {
            return Err(SdpcError::Config("max_iters must be at least 1".into()));
        }
        Ok(Self {
            layers,
            k_fb,
            t_stab,
            max_iters,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Per-layer tensor dimensions for an input of shape `input_dim`,
    /// index 0 being the input itself.
    pub fn layer_dims(&self, input_dim: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims = vec![input_dim];
        for (i, layer) in self.layers.iter().enumerate() {
            let dict = &layer.dictionary;
            let (c_in, h, w) = dims[i];
            if dict.in_channels() != c_in {
                return Err(SdpcError::Shape {
                    layer: i + 1,
                    detail: format!(
                        "dictionary expects {} input channels, lower layer provides {}",
                        dict.in_channels(),
                        c_in
                    ),
                });
            }
            let (kh, kw) = dict.kernel_hw();
            let ho = conv_output_dim(h, kh, dict.stride).map_err(|e| SdpcError::Shape {
                layer: i + 1,
                detail: e.to_string(),
            })?;
            let wo = conv_output_dim(w, kw, dict.stride).map_err(|e| SdpcError::Shape {
                layer: i + 1,
                detail: e.to_string(),
            })?;
            dims.push((dict.num_features(), ho, wo));
        }
        Ok(dims)
    }
}

/// Mutable inference state carried across iterations of the solver.
#[derive(Debug, Clone)]
pub struct InferenceState {
    /// Current layer activities, `gamma[i]` for layer `i+1`.
    pub gamma: Vec<Array3<f32>>,
    /// Activities from the previous iteration, for the momentum extrapolation
    /// and the stability test.
    pub gamma_prev: Vec<Array3<f32>>,
    /// Momentum variables; the extrapolated points the updates linearize at.
    pub gamma_m: Vec<Array3<f32>>,
    /// Momentum strength; starts at 1 and grows every iteration.
    pub alpha: f32,
    pub iteration: usize,
}

impl InferenceState {
    /// All-zero state matching the geometry of `net` applied to `input_dim`.
    pub fn zeros(net: &NetworkConfig, input_dim: (usize, usize, usize)) -> Result<Self> {
        let dims = net.layer_dims(input_dim)?;
        let make = || dims[1..].iter().map(|&d| Array3::zeros(d)).collect::<Vec<_>>();
        Ok(Self {
            gamma: make(),
            gamma_prev: make(),
            gamma_m: make(),
            alpha: 1.0,
            iteration: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn activity_map_rejects_negative() {
        let mut t = Array3::zeros((1, 2, 2));
        t[(0, 0, 0)] = -0.5;
        assert!(ActivityMap::new(t).is_err());
    }

    #[test]
    fn active_fraction_counts_strictly_positive() {
        let mut t = Array3::zeros((1, 2, 2));
        t[(0, 0, 0)] = 1.0;
        t[(0, 1, 1)] = 0.5;
        let m = ActivityMap::new(t).unwrap();
        assert_eq!(m.active_fraction(), 0.5);
    }

    #[test]
    fn random_dictionary_has_unit_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = ConvDictionary::random(8, 3, 5, 2, &mut rng).unwrap();
        for n in dict.atom_norms() {
            assert!((n - 1.0).abs() < 1e-6, "atom norm {n}");
        }
    }

    #[test]
    fn layer_dims_follow_strided_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d1 = ConvDictionary::random(64, 3, 8, 2, &mut rng).unwrap();
        let d2 = ConvDictionary::random(128, 64, 8, 1, &mut rng).unwrap();
        let net = NetworkConfig::new(
            vec![
                LayerConfig::new(d1, 0.4).unwrap(),
                LayerConfig::new(d2, 1.2).unwrap(),
            ],
            1.0,
            5e-3,
            500,
        )
        .unwrap();
        let dims = net.layer_dims((3, 96, 96)).unwrap();
        assert_eq!(dims, vec![(3, 96, 96), (64, 45, 45), (128, 38, 38)]);
    }

    #[test]
    fn mismatched_channels_name_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d1 = ConvDictionary::random(4, 3, 3, 1, &mut rng).unwrap();
        let d2 = ConvDictionary::random(8, 5, 3, 1, &mut rng).unwrap();
        let net = NetworkConfig::new(
            vec![
                LayerConfig::new(d1, 0.1).unwrap(),
                LayerConfig::new(d2, 0.1).unwrap(),
            ],
            0.0,
            5e-3,
            10,
        )
        .unwrap();
        match net.layer_dims((3, 8, 8)) {
            Err(SdpcError::Shape { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
