//! Strided convolution primitives.
//!
//! The three routines here — forward convolution, transposed convolution and
//! the weight gradient — are all phrased as one matrix product against an
//! im2col patch matrix. Because `col2im_add` scatters over exactly the index
//! map that `im2col` gathers from, the forward and transposed convolutions
//! are adjoint by construction, and the gradient is the correlation that
//! differentiates the forward map.
//!
//! Boundary handling is "valid": the kernel never leaves the input. With a
//! stride that does not divide `input - kernel` exactly, the transposed
//! convolution covers less than the full input plane; callers pass the target
//! spatial size and the uncovered fringe stays zero, which is what keeps the
//! adjoint identity exact in that geometry.

use crate::error::{Result, SdpcError};
use crate::util::Scalar;
use ndarray::{linalg::general_mat_mul, Array2, Array3, Array4, ArrayView3, ArrayView4};

/// Output extent of a valid strided convolution: floor((input - kernel)/stride) + 1.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(SdpcError::Config(
            "kernel and stride must be at least 1".into(),
        ));
    }
    if input < kernel {
        return Err(SdpcError::Config(format!(
            "input extent {input} smaller than kernel {kernel}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

/// Input extent covered by a transposed convolution of a `code`-wide grid.
pub fn covered_dim(code: usize, kernel: usize, stride: usize) -> usize {
    (code - 1) * stride + kernel
}

/// Gather kernel-sized patches into a `[C*kh*kw, ho*wo]` matrix.
fn im2col<T: Scalar>(input: ArrayView3<'_, T>, kh: usize, kw: usize, stride: usize) -> Array2<T> {
    let (c, h, w) = input.dim();
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let mut col = Array2::zeros((c * kh * kw, ho * wo));
    for ci in 0..c {
        for di in 0..kh {
            for dj in 0..kw {
                let row = (ci * kh + di) * kw + dj;
                let mut dst = col.row_mut(row);
                for u in 0..ho {
                    let iu = u * stride + di;
                    for v in 0..wo {
                        dst[u * wo + v] = input[(ci, iu, v * stride + dj)];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add a `[C*kh*kw, hc*wc]` column matrix back onto an image plane.
fn col2im_add<T: Scalar>(
    col: &Array2<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    hc: usize,
    wc: usize,
    out: &mut Array3<T>,
) {
    let c = out.dim().0;
    for ci in 0..c {
        for di in 0..kh {
            for dj in 0..kw {
                let row = (ci * kh + di) * kw + dj;
                let src = col.row(row);
                for u in 0..hc {
                    let ou = u * stride + di;
                    for v in 0..wc {
                        out[(ci, ou, v * stride + dj)] += src[u * wc + v];
                    }
                }
            }
        }
    }
}

fn weights_as_matrix<T: Scalar>(weights: ArrayView4<'_, T>) -> Array2<T> {
    let (f, c, kh, kw) = weights.dim();
    let mut m = Array2::zeros((f, c * kh * kw));
    for fi in 0..f {
        let mut row = m.row_mut(fi);
        let atom = weights.index_axis(ndarray::Axis(0), fi);
        for (dst, &src) in row.iter_mut().zip(atom.iter()) {
            *dst = src;
        }
    }
    m
}

/// Valid strided convolution: `[F,C,kh,kw] * [C,H,W] -> [F,Ho,Wo]`.
pub fn conv_forward<T: Scalar>(
    weights: ArrayView4<'_, T>,
    input: ArrayView3<'_, T>,
    stride: usize,
) -> Result<Array3<T>> {
    let (f, c, kh, kw) = weights.dim();
    let (ci, h, w) = input.dim();
    if ci != c {
        return Err(SdpcError::Config(format!(
            "convolution expects {c} input channels, got {ci}"
        )));
    }
    let ho = conv_output_dim(h, kh, stride)?;
    let wo = conv_output_dim(w, kw, stride)?;
    let col = im2col(input, kh, kw, stride);
    let wmat = weights_as_matrix(weights);
    let mut out2 = Array2::zeros((f, ho * wo));
    general_mat_mul(T::one(), &wmat, &col, T::zero(), &mut out2);
    Ok(out2
        .into_shape_with_order((f, ho, wo))
        .expect("gemm output reshapes to conv grid"))
}

/// Transposed (fractionally strided) convolution onto a plane of size `out_hw`.
///
/// `out_hw` must be at least the covered extent `(code-1)*stride + kernel`;
/// any excess stays zero.
pub fn conv_transpose<T: Scalar>(
    weights: ArrayView4<'_, T>,
    code: ArrayView3<'_, T>,
    stride: usize,
    out_hw: (usize, usize),
) -> Result<Array3<T>> {
    let (f, c, kh, kw) = weights.dim();
    let (fc, hc, wc) = code.dim();
    if fc != f {
        return Err(SdpcError::Config(format!(
            "transposed convolution expects {f} code channels, got {fc}"
        )));
    }
    let (oh, ow) = out_hw;
    if oh < covered_dim(hc, kh, stride) || ow < covered_dim(wc, kw, stride) {
        return Err(SdpcError::Config(format!(
            "output plane {oh}x{ow} smaller than covered extent {}x{}",
            covered_dim(hc, kh, stride),
            covered_dim(wc, kw, stride)
        )));
    }
    let code2 = code
        .to_shape((f, hc * wc))
        .expect("code reshapes to matrix")
        .to_owned();
    let wmat = weights_as_matrix(weights);
    let mut col = Array2::zeros((c * kh * kw, hc * wc));
    general_mat_mul(T::one(), &wmat.t().to_owned(), &code2, T::zero(), &mut col);
    let mut out = Array3::zeros((c, oh, ow));
    col2im_add(&col, kh, kw, stride, hc, wc, &mut out);
    Ok(out)
}

/// Gradient of the forward map with respect to the weights.
///
/// `grad[f,c,di,dj] = sum_{u,v} code[f,u,v] * field[c, u*s+di, v*s+dj]`, the
/// correlation pattern that differentiates `conv_transpose(weights, code)`
/// against a target field of the same shape as the reconstruction.
pub fn conv_weight_gradient<T: Scalar>(
    code: ArrayView3<'_, T>,
    field: ArrayView3<'_, T>,
    kernel_hw: (usize, usize),
    stride: usize,
) -> Result<Array4<T>> {
    let (f, hc, wc) = code.dim();
    let (c, h, w) = field.dim();
    let (kh, kw) = kernel_hw;
    let ho = conv_output_dim(h, kh, stride)?;
    let wo = conv_output_dim(w, kw, stride)?;
    if ho < hc || wo < wc {
        return Err(SdpcError::Config(format!(
            "field {h}x{w} too small for a {hc}x{wc} code grid"
        )));
    }
    // The code grid may cover fewer positions than the field admits when the
    // stride does not divide exactly; gradient entries only involve positions
    // the code actually touches.
    let col = im2col(field, kh, kw, stride);
    let mut code2 = Array2::zeros((f, ho * wo));
    for fi in 0..f {
        for u in 0..hc {
            for v in 0..wc {
                code2[(fi, u * wo + v)] = code[(fi, u, v)];
            }
        }
    }
    let mut grad2 = Array2::zeros((f, c * kh * kw));
    general_mat_mul(T::one(), &code2, &col.t().to_owned(), T::zero(), &mut grad2);
    Ok(grad2
        .into_shape_with_order((f, c, kh, kw))
        .expect("gradient reshapes to weight tensor"))
}
