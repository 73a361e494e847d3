//! Floating-point element types a [`Tensor`](crate::Tensor) can hold.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used for activations, weights and gradients: `f32` for
/// training, `f64` for finite-difference verification.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Width of one element in the binary formats.
    const BYTES: usize;
    /// Precision tag stored in model files (bit width).
    const PRECISION_TAG: u8;
    /// Magic that opens a raw tensor dump of this element type.
    const DUMP_MAGIC: &'static [u8; 8];

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one element from exactly [`Self::BYTES`] bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    const PRECISION_TAG: u8 = 32;
    const DUMP_MAGIC: &'static [u8; 8] = b"XPNT0001";

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte element"))
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    const PRECISION_TAG: u8 = 64;
    const DUMP_MAGIC: &'static [u8; 8] = b"XPNT0002";

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte element"))
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }
}
