//! Floating-point element type shared by the model and the probability code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// floating point: f32 or f64
pub trait Scalar: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Absolute slack allowed when checking that a distribution sums to one.
    const SIMPLEX_TOLERANCE: f64;

    /// Width in bytes of the little-endian storage encoding.
    const BYTES: usize;

    /// Safetensors dtype tag of the storage encoding.
    const DTYPE: safetensors::Dtype;

    #[inline]
    fn of(v: f64) -> Self {
        // infallible for f32/f64 (out-of-range saturates to ±inf)
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value; `bytes` must be exactly [`Scalar::BYTES`] long.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const SIMPLEX_TOLERANCE: f64 = 1e-5;
    const BYTES: usize = 4;
    const DTYPE: safetensors::Dtype = safetensors::Dtype::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(bytes);
        f32::from_le_bytes(buf)
    }
}

impl Scalar for f64 {
    const SIMPLEX_TOLERANCE: f64 = 1e-9;
    const BYTES: usize = 8;
    const DTYPE: safetensors::Dtype = safetensors::Dtype::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(bytes);
        f64::from_le_bytes(buf)
    }
}
