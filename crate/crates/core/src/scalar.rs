//! Scalar abstraction for the numeric core.
//!
//! Everything downstream (plants, policies, solvers, metrics) is generic over
//! [`Real`], so the same code runs in `f32` or `f64`. The benchmark harness
//! pins `f64`.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the crate.
///
/// Blanket-implemented for any type with the listed capabilities; in practice
/// `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssignOps
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and tolerances in generic code.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    /// `self^k` for small non-negative integer exponents.
    fn powi_(self, k: i32) -> Self {
        self.powi(k)
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + NumAssignOps
        + ScalarOperand
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
