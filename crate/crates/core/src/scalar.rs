//! Scalar abstraction shared by the vector and geometry math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Floating point element type for embeddings and boxes: `f32` or `f64`.
///
/// Every reduction that feeds a comparison (dot products, IoU) is carried out
/// in `f64` regardless of the storage type, so rankings do not depend on the
/// element width.
pub trait Scalar:
    Float + FromPrimitive + NumCast + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self;

    #[inline]
    fn widen(self) -> f64 {
        // Float -> f64 never fails for f32/f64.
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}
