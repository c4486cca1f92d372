//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Small and dependency-free; the whitening fit uses it on patch covariance
//! matrices (a few hundred dimensions at most).

use crate::error::{Result, SdpcError};
use ndarray::{Array1, Array2};

/// Eigenvalues (descending) and matching eigenvector columns of a symmetric
/// matrix. Off-diagonal asymmetry beyond rounding is a caller bug.
pub fn eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SdpcError::Numerical("eigh expects a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::eye(n);

    const MAX_SWEEPS: usize = 50;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        let scale: f64 = m.diag().iter().map(|d| d * d).sum::<f64>().max(1e-300);
        if off <= 1e-24 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[(row, col)] = v[(row, src)];
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let a = arr2(&[[3.0, 0.0], [0.0, 1.0]]);
        let (vals, _) = eigh(&a).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn known_2x2_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1
        let a = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let (vals, vecs) = eigh(&a).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        // eigenvector for 3 is (1,1)/sqrt(2) up to sign
        let ratio = vecs[(0, 0)] / vecs[(1, 0)];
        assert!((ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reconstructs_the_input() {
        let a = arr2(&[
            [4.0, 1.0, 0.5],
            [1.0, 3.0, -0.25],
            [0.5, -0.25, 2.0],
        ]);
        let (vals, vecs) = eigh(&a).unwrap();
        let lambda = Array2::from_diag(&vals);
        let rebuilt = vecs.dot(&lambda).dot(&vecs.t());
        for (x, y) in rebuilt.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}
