use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by every numeric routine in the crate.
///
/// Implemented for `f32` and `f64`; `ndarray` dispatches both to its
/// blocked GEMM kernels.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; values out of range saturate to infinity.
    fn of(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Zero when `|self|` is below `min_positive / epsilon`, `self` otherwise.
    ///
    /// The margin keeps products with small constants in the normal range,
    /// where subnormal intermediates would otherwise cost a slow path.
    #[inline]
    fn flush(self) -> Self {
        if self.abs() < Self::min_positive_value() / Self::epsilon() {
            Self::zero()
        } else {
            self
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
