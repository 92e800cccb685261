//! Gather/scatter formulation of the (dilated) convolution.
//!
//! `im2col` lays every receptive window out as one row of a matrix whose
//! columns follow the canonical tap order (kernel row, kernel column, input
//! channel); the convolution then becomes a matrix product. The products here
//! use four partial sums, so results can differ from [`conv_forward`] in the
//! last bits. The canonical kernel remains the reference.
//!
//! [`conv_forward`]: super::conv_forward

use rayon::prelude::*;

use crate::layers::{tap_coord, ConvGrads, ConvSpec};
use crate::tensor::Dims;
use crate::{Error, Result, Scalar, Tensor};

/// Column matrix in row-major order: `positions x (kernel_h * kernel_w * in_channels)`.
pub struct Columns<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

pub fn im2col<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec) -> Result<(Columns<T>, Dims)> {
    let in_dims = input.dims();
    let out_dims = spec.output_dims(in_dims)?;
    let depth = spec.in_channels;
    let k = spec.kernel_h * spec.kernel_w * depth;
    let rows = out_dims.h * out_dims.w;
    let mut data = vec![T::zero(); rows * k];
    let x = input.data();
    data.par_chunks_mut(k).enumerate().for_each(|(p, row)| {
        let (i, j) = (p / out_dims.w, p % out_dims.w);
        for a in 0..spec.kernel_h {
            let Some(r) = tap_coord(i, a, spec.stride, spec.pad, spec.est, in_dims.h) else {
                continue;
            };
            for b in 0..spec.kernel_w {
                let Some(s) = tap_coord(j, b, spec.stride, spec.pad, spec.est, in_dims.w) else {
                    continue;
                };
                let dst = (a * spec.kernel_w + b) * depth;
                row[dst..dst + depth].copy_from_slice(&x[in_dims.index(r, s, 0)..][..depth]);
            }
        }
    });
    Ok((Columns { rows, cols: k, data }, out_dims))
}

/// Scatter-adds a column matrix back onto an input-shaped tensor.
pub fn col2im<T: Scalar>(cols: &Columns<T>, in_dims: Dims, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_dims = spec.output_dims(in_dims)?;
    let depth = spec.in_channels;
    if cols.rows != out_dims.h * out_dims.w || cols.cols != spec.kernel_h * spec.kernel_w * depth {
        return Err(Error::Shape(format!(
            "column matrix {}x{} does not fit {in_dims} under {spec:?}",
            cols.rows, cols.cols
        )));
    }
    let mut out = Tensor::zeros(in_dims)?;
    let y = out.data_mut();
    for (p, row) in cols.data.chunks_exact(cols.cols).enumerate() {
        let (i, j) = (p / out_dims.w, p % out_dims.w);
        for a in 0..spec.kernel_h {
            let Some(r) = tap_coord(i, a, spec.stride, spec.pad, spec.est, in_dims.h) else {
                continue;
            };
            for b in 0..spec.kernel_w {
                let Some(s) = tap_coord(j, b, spec.stride, spec.pad, spec.est, in_dims.w) else {
                    continue;
                };
                let src = (a * spec.kernel_w + b) * depth;
                let dst = in_dims.index(r, s, 0);
                for d in 0..depth {
                    y[dst + d] += row[src + d];
                }
            }
        }
    }
    Ok(out)
}

/// Kernels as rows: `out_channels x (kernel_h * kernel_w * in_channels)`.
fn kernel_matrix<T: Scalar>(weights: &Tensor<T>, spec: &ConvSpec) -> Vec<T> {
    let depth = spec.in_channels;
    let taps = spec.kernel_h * spec.kernel_w;
    let wstride = spec.out_channels * depth;
    let w = weights.data();
    let mut m = Vec::with_capacity(spec.out_channels * taps * depth);
    for c in 0..spec.out_channels {
        for t in 0..taps {
            m.extend_from_slice(&w[t * wstride + c * depth..][..depth]);
        }
    }
    m
}

fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for q in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * q + l] * b[4 * q + l];
        }
    }
    let mut tail = T::zero();
    for n in 4 * chunks..a.len() {
        tail += a[n] * b[n];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn conv_forward_im2col<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if weights.dims() != spec.weight_dims() {
        return Err(Error::Shape(format!("conv weights must be {}, got {}", spec.weight_dims(), weights.dims())));
    }
    if spec.has_bias != bias.is_some() {
        return Err(Error::Shape("conv bias presence does not match spec".into()));
    }
    let (cols, out_dims) = im2col(input, spec)?;
    let kmat = kernel_matrix(weights, spec);
    let mut out = Tensor::zeros(out_dims)?;
    let oc = spec.out_channels;
    out.data_mut().par_chunks_mut(oc).enumerate().for_each(|(p, px)| {
        let row = &cols.data[p * cols.cols..][..cols.cols];
        for (c, y) in px.iter_mut().enumerate() {
            let mut v = dot4(row, &kmat[c * cols.cols..][..cols.cols]);
            if let Some(b) = bias {
                v += b.data()[c];
            }
            *y = v;
        }
    });
    Ok(out)
}

pub fn conv_backward_im2col<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (cols, out_dims) = im2col(input, spec)?;
    if grad_out.dims() != out_dims {
        return Err(Error::Shape(format!("conv grad_out must be {out_dims}, got {}", grad_out.dims())));
    }
    if weights.dims() != spec.weight_dims() {
        return Err(Error::Shape(format!("conv weights must be {}, got {}", spec.weight_dims(), weights.dims())));
    }
    let kmat = kernel_matrix(weights, spec);
    let oc = spec.out_channels;
    let k = cols.cols;
    let g = grad_out.data();

    let mut gcols = Columns { rows: cols.rows, cols: k, data: vec![T::zero(); cols.rows * k] };
    gcols.data.par_chunks_mut(k).enumerate().for_each(|(p, row)| {
        for c in 0..oc {
            let go = g[p * oc + c];
            for (r, &w) in row.iter_mut().zip(&kmat[c * k..][..k]) {
                *r += go * w;
            }
        }
    });
    let gx = col2im(&gcols, input.dims(), spec)?;

    let depth = spec.in_channels;
    let wstride = oc * depth;
    let per_kernel: Vec<Vec<T>> = (0..oc)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![T::zero(); k];
            for p in 0..cols.rows {
                let go = g[p * oc + c];
                for (a, &x) in acc.iter_mut().zip(&cols.data[p * k..][..k]) {
                    *a += go * x;
                }
            }
            acc
        })
        .collect();
    let mut gw = Tensor::zeros(spec.weight_dims())?;
    for (c, row) in per_kernel.iter().enumerate() {
        for t in 0..spec.kernel_h * spec.kernel_w {
            gw.data_mut()[t * wstride + c * depth..][..depth].copy_from_slice(&row[t * depth..][..depth]);
        }
    }

    let bias = if spec.has_bias {
        let mut gb = Tensor::zeros(spec.bias_dims())?;
        for px in g.chunks_exact(oc) {
            for (b, &v) in gb.data_mut().iter_mut().zip(px) {
                *b += v;
            }
        }
        Some(gb)
    } else {
        None
    };
    Ok(ConvGrads { input: gx, weights: gw, bias })
}
