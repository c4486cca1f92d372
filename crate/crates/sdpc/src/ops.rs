//! Core network operations: thresholding, prediction, the feedforward drive
//! and the spectral step size.

use crate::error::{Result, SdpcError};
use crate::kernels::{conv_forward, conv_transpose};
use crate::model::ConvDictionary;
use crate::util::{dot, l2_norm, Scalar};
use ndarray::{Array3, ArrayView3, ArrayView4, Dimension};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Non-negative soft threshold: `x - alpha` where `x >= alpha`, zero below.
/// With `alpha = 0` this is a plain rectifier.
pub fn soft_threshold<T: Scalar, D: Dimension>(
    x: &ndarray::Array<T, D>,
    alpha: T,
) -> ndarray::Array<T, D> {
    x.mapv(|v| if v >= alpha { v - alpha } else { T::zero() })
}

/// In-place variant used by the solver's hot loop.
pub fn soft_threshold_inplace<T: Scalar, D: Dimension>(x: &mut ndarray::Array<T, D>, alpha: T) {
    x.mapv_inplace(|v| if v >= alpha { v - alpha } else { T::zero() });
}

/// Top-down prediction: transposed convolution of a code through a weight
/// tensor onto a plane of spatial size `out_hw`.
pub fn predict_generic<T: Scalar>(
    atoms: ArrayView4<'_, T>,
    stride: usize,
    gamma: ArrayView3<'_, T>,
    out_hw: (usize, usize),
) -> Result<Array3<T>> {
    conv_transpose(atoms, gamma, stride, out_hw)
}

/// Bottom-up drive: strided convolution, the exact adjoint of
/// [`predict_generic`].
pub fn forward_drive_generic<T: Scalar>(
    atoms: ArrayView4<'_, T>,
    stride: usize,
    err: ArrayView3<'_, T>,
) -> Result<Array3<T>> {
    conv_forward(atoms, err, stride)
}

/// Top-down prediction through a dictionary, targeting the lower layer's
/// spatial extent.
pub fn predict(
    dict: &ConvDictionary,
    gamma: ArrayView3<'_, f32>,
    out_hw: (usize, usize),
) -> Result<Array3<f32>> {
    predict_generic(dict.atoms.view(), dict.stride, gamma, out_hw)
}

/// Prediction onto the exactly covered extent `(code-1)*stride + kernel`,
/// for callers without a target plane (back-projection, visualization).
pub fn predict_covered(dict: &ConvDictionary, gamma: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
    let (_, hc, wc) = gamma.dim();
    let (kh, kw) = dict.kernel_hw();
    let out_hw = (
        crate::kernels::covered_dim(hc, kh, dict.stride),
        crate::kernels::covered_dim(wc, kw, dict.stride),
    );
    predict(dict, gamma, out_hw)
}

/// Bottom-up drive through a dictionary.
pub fn forward_drive(dict: &ConvDictionary, err: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
    forward_drive_generic(dict.atoms.view(), dict.stride, err)
}

/// Largest eigenvalue of the composed operator `forward_drive . predict`
/// estimated by power iteration, and the inference step size derived from it.
///
/// The iteration starts from a seed-fixed random vector so repeated calls are
/// bit-identical, converges to `1e-4` relative accuracy and gives up after
/// 1000 rounds.
pub fn compute_step_size(dict: &ConvDictionary, input_hw: (usize, usize)) -> Result<f32> {
    let sigma = largest_gram_eigenvalue(dict, input_hw)?;
    if sigma <= 0.0 {
        return Err(SdpcError::Numerical(
            "dictionary operator has zero spectral norm".into(),
        ));
    }
    Ok((1.0 / sigma) as f32)
}

/// Power iteration on the Gram operator of the dictionary at a given input
/// geometry. Exposed for the learning loop, which refreshes step sizes after
/// dictionary updates.
///
/// The Rayleigh quotients converge geometrically, so the remaining error is
/// estimated by Aitken extrapolation of the last three iterates; the plain
/// successive-change test stalls long before the estimate is accurate when
/// the top eigenvalues cluster.
pub fn largest_gram_eigenvalue(dict: &ConvDictionary, input_hw: (usize, usize)) -> Result<f64> {
    largest_gram_eigenvalue_from(dict, input_hw, None).map(|(lambda, _)| lambda)
}

/// Power iteration with an optional warm start. A previous eigenvector cuts
/// the refresh after a small dictionary update down to a few rounds; the
/// returned vector is the state to pass next time.
pub fn largest_gram_eigenvalue_from(
    dict: &ConvDictionary,
    input_hw: (usize, usize),
    start: Option<&Array3<f32>>,
) -> Result<(f64, Array3<f32>)> {
    const TOL: f64 = 1e-4;
    const MAX_ROUNDS: usize = 1000;

    let (h, w) = input_hw;
    let (kh, kw) = dict.kernel_hw();
    let hc = crate::kernels::conv_output_dim(h, kh, dict.stride)?;
    let wc = crate::kernels::conv_output_dim(w, kw, dict.stride)?;
    let f = dict.num_features();

    let mut v = match start {
        Some(prev) if prev.dim() == (f, hc, wc) => prev.clone(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5d9c);
            Array3::from_shape_fn((f, hc, wc), |_| rng.random_range(-1.0f32..1.0))
        }
    };
    let norm = l2_norm(&v) as f32;
    if norm == 0.0 {
        return Err(SdpcError::Numerical("degenerate power iteration start".into()));
    }
    v.mapv_inplace(|x| x / norm);

    let mut history: [f64; 3] = [0.0; 3];
    for round in 0..MAX_ROUNDS {
        let recon = predict(dict, v.view(), (h, w))?;
        let gv = forward_drive(dict, recon.view())?;
        let lambda = dot(&v, &gv);
        let gv_norm = l2_norm(&gv);
        if gv_norm == 0.0 {
            return Err(SdpcError::Numerical(
                "Gram operator annihilated the probe vector".into(),
            ));
        }
        // ||Gv - lambda v|| with unit v
        let residual = (gv_norm * gv_norm - lambda * lambda).max(0.0).sqrt();
        let inv = (1.0 / gv_norm) as f32;
        v = gv.mapv(|x| x * inv);

        history = [history[1], history[2], lambda];
        if residual <= TOL * lambda.abs() {
            return Ok((lambda, v));
        }
        if round >= 2 {
            let d1 = history[1] - history[0];
            let d2 = history[2] - history[1];
            if d2.abs() <= f32::EPSILON as f64 * lambda.abs() {
                // below the f32 noise floor of the conv outputs
                return Ok((lambda, v));
            }
            if d1.abs() > 0.0 {
                let ratio = d2 / d1;
                if ratio > 0.0 && ratio < 0.9999 {
                    let remaining = d2 * ratio / (1.0 - ratio);
                    if remaining.abs() <= 0.5 * TOL * lambda.abs() {
                        return Ok((lambda + remaining, v));
                    }
                }
            }
        }
    }
    Err(SdpcError::Numerical(format!(
        "power iteration did not converge; last estimate {}",
        history[2]
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    #[test]
    fn soft_threshold_hand_cases() {
        let x = ndarray::arr1(&[2.0f32, 0.3, -1.0]);
        let above = soft_threshold(&x, 0.5);
        assert_eq!(above[0], 1.5);
        assert_eq!(above[1], 0.0);
        let rectified = soft_threshold(&x, 0.0);
        assert_eq!(rectified[2], 0.0);
        assert_eq!(rectified[0], 2.0);
    }

    #[test]
    fn predict_of_zero_code_is_zero() {
        let atoms = Array4::from_elem((2, 1, 3, 3), 0.7f32);
        let dict = ConvDictionary::new(atoms, 1).unwrap();
        let gamma = Array3::zeros((2, 4, 4));
        let out = predict(&dict, gamma.view(), (6, 6)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_activation_pastes_the_atom() {
        let mut atoms = Array4::<f32>::zeros((1, 1, 3, 3));
        for di in 0..3 {
            for dj in 0..3 {
                atoms[(0, 0, di, dj)] = (di * 3 + dj) as f32;
            }
        }
        let dict = ConvDictionary::new(atoms.clone(), 1).unwrap();
        let mut gamma = Array3::<f32>::zeros((1, 4, 4));
        gamma[(0, 1, 2)] = 1.0;
        let out = predict(&dict, gamma.view(), (6, 6)).unwrap();
        for di in 0..3 {
            for dj in 0..3 {
                assert_eq!(out[(0, 1 + di, 2 + dj)], atoms[(0, 0, di, dj)]);
            }
        }
        assert_eq!(out[(0, 0, 0)], 0.0);
    }

    #[test]
    fn delta_kernel_drive_is_identity() {
        let mut atoms = Array4::<f32>::zeros((1, 1, 1, 1));
        atoms[(0, 0, 0, 0)] = 1.0;
        let dict = ConvDictionary::new(atoms, 1).unwrap();
        let err = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| (i * 4 + j) as f32);
        let out = forward_drive(&dict, err.view()).unwrap();
        assert_eq!(out, err);
    }

    #[test]
    fn zero_error_drives_nothing() {
        let atoms = Array4::from_elem((3, 2, 3, 3), 0.5f32);
        let dict = ConvDictionary::new(atoms, 1).unwrap();
        let err = Array3::zeros((2, 5, 5));
        let out = forward_drive(&dict, err.view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_overlapping_unit_atom_gives_unit_step() {
        // stride >= kernel: atoms never overlap, the Gram operator is the
        // identity on the covered positions.
        let mut atoms = Array4::<f32>::zeros((1, 1, 2, 2));
        atoms[(0, 0, 0, 0)] = 0.5;
        atoms[(0, 0, 0, 1)] = 0.5;
        atoms[(0, 0, 1, 0)] = 0.5;
        atoms[(0, 0, 1, 1)] = 0.5;
        let dict = ConvDictionary::new(atoms, 2).unwrap();
        let eta = compute_step_size(&dict, (8, 8)).unwrap();
        assert!((eta - 1.0).abs() < 1e-4, "step size {eta}");
    }

    #[test]
    fn atom_scaling_scales_step_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dict = ConvDictionary::random(4, 1, 3, 1, &mut rng).unwrap();
        let eta = compute_step_size(&dict, (8, 8)).unwrap();

        let mut doubled = dict.clone();
        doubled.atoms.mapv_inplace(|v| v * 2.0);
        let eta2 = compute_step_size(&doubled, (8, 8)).unwrap();
        assert!(
            (eta2 - eta / 4.0).abs() < 1e-3 * eta,
            "expected quarter step, got {eta2} from {eta}"
        );
    }
}
