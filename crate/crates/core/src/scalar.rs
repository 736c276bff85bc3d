//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable throughout the crate (`f32` or `f64`).
///
/// Everything is written against `nalgebra`'s `RealField` so that the same
/// code path serves both precisions; `FromPrimitive`/`ToPrimitive` cover the
/// literal constants and the conversions at the I/O boundary.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in target scalar")
}

/// Tolerance floor: `base` for double precision, widened to a few ulps for
/// lower precision types.
#[inline]
pub(crate) fn tol_floor<T: Real>(base: f64, ulps: f64) -> T {
    let base = lit::<T>(base);
    let eps = T::default_epsilon() * lit::<T>(ulps);
    if eps > base {
        eps
    } else {
        base
    }
}
