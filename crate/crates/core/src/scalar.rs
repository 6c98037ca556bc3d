//! Scalar abstraction for the geometric core.
//!
//! Distance computation, weight windows and separation thresholds are generic
//! over any IEEE float. The engine, trace format and CLI pin [`Real`] (`f64`)
//! so that traces are byte-reproducible; `f32` instantiations exist for the
//! lighter-weight call sites and are exercised in tests.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point scalar usable by the metric / weight / separation layers.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Absolute tolerance for threshold comparisons (`>= beta*B - tol`,
    /// `sum <= 2B + tol`). Fixed per type so traces are reproducible.
    fn cmp_tolerance() -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn cmp_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    #[inline]
    fn cmp_tolerance() -> Self {
        1e-4
    }
}

/// Default scalar for the engine, traces and CLI.
pub type Real = f64;

/// `sum <= limit` up to the scalar tolerance. Used for the 2B weight window.
#[inline]
pub fn le_tol<S: Scalar>(sum: S, limit: S) -> bool {
    sum <= limit + S::cmp_tolerance()
}

/// `product >= threshold` up to the scalar tolerance. Used for well-separation.
#[inline]
pub fn ge_tol<S: Scalar>(product: S, threshold: S) -> bool {
    product >= threshold - S::cmp_tolerance()
}
