//! Forward and backward kernels.
//!
//! Convolution and max pooling carry an equivalent stride `est`: kernel taps
//! are spaced `est` input elements apart. With `est = 1` they are the classic
//! layers; with `est > 1` they are the eConv/ePool layers that a densified
//! network uses after a pooling layer has had its stride set to 1.
//!
//! Indexing is 0-based. For an output position `(i, j)` the tap `(a, b)` of
//! a `kh x kw` kernel reads the input at
//!
//! ```text
//! row = i * stride - pad + a * est
//! col = j * stride - pad + b * est
//! ```
//!
//! which is the 1-based `z[i + (i'-1)*eST, j + (j'-1)*eST]` form shifted by
//! one and extended with stride and zero padding.

mod act;
mod conv;
mod im2col;
mod pool;

pub use act::{gap_backward, gap_forward, relu_backward, relu_forward};
pub use conv::{conv_backward, conv_forward, ConvGrads, ConvSpec};
pub use im2col::{col2im, conv_backward_im2col, conv_forward_im2col, im2col};
pub use pool::{pool_backward, pool_forward, PoolArgmax, PoolSpec};

/// Extent of a kernel of `k` taps spaced `est` apart.
#[inline]
pub fn dilated_extent(k: usize, est: usize) -> usize {
    (k - 1) * est + 1
}

/// Output length along one axis, or `None` when no window fits.
pub fn output_len(input: usize, k: usize, stride: usize, pad: usize, est: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    let span = dilated_extent(k, est);
    if k == 0 || stride == 0 || est == 0 || padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Input coordinate read by tap `tap` of output `out`, if it is inside `[0, len)`.
#[inline]
pub(crate) fn tap_coord(out: usize, tap: usize, stride: usize, pad: usize, est: usize, len: usize) -> Option<usize> {
    let pos = (out * stride + tap * est) as isize - pad as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}
