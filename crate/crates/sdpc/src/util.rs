//! Small numeric helpers shared across the crate.
//!
//! Tensors are stored in 32-bit floats; norms and inner products accumulate
//! in 64-bit to keep stability checks and test tolerances meaningful.

use ndarray::{ArrayBase, Data, Dimension};

/// Float element type for the convolution kernels and solver code.
///
/// Implemented for `f32` and `f64`; the production path runs at `f32`, the
/// test suite instantiates the same code at `f64` where quantization noise
/// would otherwise mask an algebraic identity.
pub trait Scalar: ndarray::NdFloat {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Euclidean norm with 64-bit accumulation.
pub fn l2_norm<T: Scalar, S: Data<Elem = T>, D: Dimension>(a: &ArrayBase<S, D>) -> f64 {
    a.iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
}

/// Inner product with 64-bit accumulation. Shapes must match.
pub fn dot<T: Scalar, S1: Data<Elem = T>, S2: Data<Elem = T>, D: Dimension>(
    a: &ArrayBase<S1, D>,
    b: &ArrayBase<S2, D>,
) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| x.to_f64() * y.to_f64())
        .sum()
}

/// Sum of absolute values with 64-bit accumulation.
pub fn l1_norm<T: Scalar, S: Data<Elem = T>, D: Dimension>(a: &ArrayBase<S, D>) -> f64 {
    a.iter().map(|&v| v.to_f64().abs()).sum()
}

/// True if every element is finite.
pub fn all_finite<T: Scalar, S: Data<Elem = T>, D: Dimension>(a: &ArrayBase<S, D>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Box-Muller draw from the standard normal, deterministic under a seeded
/// generator.
pub fn standard_normal(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f32> {
    use rand::Rng;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        out.push((r * t.cos()) as f32);
        if out.len() < n {
            out.push((r * t.sin()) as f32);
        }
    }
    out
}

/// FNV-1a 64-bit hash, used for config and input checksums in manifests.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
