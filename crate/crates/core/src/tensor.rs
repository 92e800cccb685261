//! Order-3 tensors in `H x W x C` row-major layout and their binary format.
//!
//! Element `(i, j, k)` lives at flat index `(i * W + j) * C + k`: rows vary
//! slowest, channels fastest. Every kernel in the crate relies on this
//! layout to fix its summation order.
//!
//! # Binary format
//!
//! All integers little-endian.
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `ETEN` |
//! | 1     | version, `1` |
//! | 1     | dtype, `1` = f32, `2` = f64 |
//! | 1     | ndims, `3` |
//! | 1     | reserved, `0` |
//! | 12    | `H`, `W`, `C` as u32 |
//! | H·W·C·width | payload in row-major order |

use std::io::{Read, Write};

use crate::rng::Rng;
use crate::scalar::{decode_as, dtype_width};
use crate::{Error, Result, Scalar};

pub const TENSOR_MAGIC: &[u8; 4] = b"ETEN";
pub const TENSOR_VERSION: u8 = 1;
/// Size of the fixed header that precedes the payload.
pub const TENSOR_HEADER_LEN: usize = 4 + 1 + 1 + 1 + 1 + 3 * 4;

/// Spatial height, width and channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Dims { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.w + j) * self.c + k
    }

    fn check_positive(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::Dimension(format!("all dims must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl From<(usize, usize, usize)> for Dims {
    fn from((h, w, c): (usize, usize, usize)) -> Self {
        Dims { h, w, c }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Dims>, fill: T) -> Result<Self> {
        let dims = dims.into();
        dims.check_positive()?;
        Ok(Tensor { dims, data: vec![fill; dims.len()] })
    }

    pub fn zeros(dims: impl Into<Dims>) -> Result<Self> {
        Self::new(dims, T::zero())
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        dims.check_positive()?;
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "data length {} does not match {dims} ({} elements)",
                data.len(),
                dims.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    /// Builds a tensor by evaluating `f(i, j, k)` in row-major order.
    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let dims = dims.into();
        dims.check_positive()?;
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..dims.h {
            for j in 0..dims.w {
                for k in 0..dims.c {
                    data.push(f(i, j, k));
                }
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Elements drawn one after another, in flat index order, uniformly from `[lo, hi)`.
    pub fn rand_uniform(dims: impl Into<Dims>, rng: &mut Rng, lo: T, hi: T) -> Result<Self> {
        let dims = dims.into();
        dims.check_positive()?;
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Range(format!("need lo < hi, got [{lo}, {hi})")));
        }
        let data = (0..dims.len()).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute element-wise difference; `None` if dims differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.dims != other.dims {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (*a - *b).abs())
                .fold(T::zero(), T::max),
        )
    }

    /// True when dims match and every element has the same bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Sub-lattice `self[row0::step, col0::step, :]`.
    pub fn subsample(&self, row0: usize, col0: usize, step: usize) -> Result<Self> {
        if step == 0 || row0 >= self.dims.h || col0 >= self.dims.w {
            return Err(Error::Shape(format!(
                "cannot subsample {} from ({row0},{col0}) with step {step}",
                self.dims
            )));
        }
        let h = (self.dims.h - row0).div_ceil(step);
        let w = (self.dims.w - col0).div_ceil(step);
        Tensor::from_fn((h, w, self.dims.c), |i, j, k| self.get(row0 + i * step, col0 + j * step, k))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + self.data.len() * T::WIDTH);
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&[TENSOR_VERSION, T::DTYPE, 3, 0]);
        for d in [self.dims.h, self.dims.w, self.dims.c] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &self.data {
            x.write_le(&mut out);
        }
        out
    }

    pub fn write_to(&self, sink: &mut impl Write) -> Result<()> {
        sink.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Reads one tensor record. Payloads stored with a different dtype are
    /// converted to `T`.
    pub fn read_from(source: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; TENSOR_HEADER_LEN];
        read_exact_or(source, &mut head, "header")?;
        if &head[0..4] != TENSOR_MAGIC {
            return Err(Error::format("magic", format!("expected ETEN, found {:?}", &head[0..4])));
        }
        if head[4] != TENSOR_VERSION {
            return Err(Error::format("version", format!("unsupported version {}", head[4])));
        }
        let dtype = head[5];
        let width = dtype_width(dtype)
            .ok_or_else(|| Error::format("dtype", format!("unsupported dtype {dtype}")))?;
        if head[6] != 3 {
            return Err(Error::format("ndims", format!("expected 3, found {}", head[6])));
        }
        if head[7] != 0 {
            return Err(Error::format("reserved", format!("expected 0, found {}", head[7])));
        }
        let dim = |k: usize| u32::from_le_bytes(head[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
        let dims = Dims::new(dim(0), dim(1), dim(2));
        if dims.h == 0 || dims.w == 0 || dims.c == 0 {
            return Err(Error::format("dims", format!("zero dimension in {dims}")));
        }
        let n = dims
            .h
            .checked_mul(dims.w)
            .and_then(|x| x.checked_mul(dims.c))
            .and_then(|x| x.checked_mul(width))
            .ok_or_else(|| Error::format("dims", format!("{dims} overflows")))?;
        let mut payload = Vec::new();
        source.take(n as u64).read_to_end(&mut payload)?;
        if payload.len() != n {
            return Err(Error::format(
                "payload",
                format!("truncated: expected {n} bytes, found {}", payload.len()),
            ));
        }
        let data = payload.chunks_exact(width).map(|b| decode_as::<T>(dtype, b)).collect();
        Ok(Tensor { dims, data })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

pub(crate) fn read_exact_or(source: &mut impl Read, buf: &mut [u8], field: &'static str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(field, format!("truncated: expected {} bytes, found {filled}", buf.len())))
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
