//! Scalar abstraction shared by every kernel.
//!
//! The engine is generic over the element type of its tensors. Anything that
//! implements [`Scalar`] can flow through the layers, the network and the
//! verification oracles; `f64` is the default used by the CLI and by the
//! exactness tests, `f32` is available for cheaper experiments.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Element type of a [`Tensor`](crate::Tensor).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Type code written into the binary tensor header.
    const DTYPE: u8;
    /// Encoded width in bytes.
    const WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);
    /// Decodes one value from exactly `WIDTH` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from `f64`; used for literals and config values.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: u8 = 1;
    const WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 2;
    const WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Width in bytes of a dtype code, or `None` if the code is unknown.
pub fn dtype_width(code: u8) -> Option<usize> {
    match code {
        1 => Some(4),
        2 => Some(8),
        _ => None,
    }
}

/// Decodes one value stored under `code` and converts it to `T`.
pub(crate) fn decode_as<T: Scalar>(code: u8, bytes: &[u8]) -> T {
    match code {
        1 => T::of(f32::read_le(bytes) as f64),
        _ => T::of(f64::read_le(bytes)),
    }
}
