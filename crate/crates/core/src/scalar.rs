//! Scalar abstraction shared by the Lie toolkit and both filters.

use nalgebra as na;
use num_traits as nt;

/// Floating point type the filters are generic over.
///
/// The numeric thresholds are per-type: the `f64` values are the ones the
/// filters are tested against, the `f32` ones are loosened to match the
/// available precision.
pub trait Real: Copy + na::RealField + nt::FloatConst + nt::FromPrimitive {
    /// Below this rotation angle exp/log evaluate their coefficients by series.
    fn small_angle() -> Self;
    /// Admissible skew/symmetry/orthogonality defect when validating input.
    fn structure_tol() -> Self;
    /// Distance from pi at which the logarithm refuses to pick a branch.
    fn log_cutoff() -> Self;
    /// Relative singular value cutoff used when truncating thin SVDs.
    fn svd_rel_cutoff() -> Self;
    /// Largest admissible condition number of a Woodbury core matrix.
    fn max_condition() -> Self;
}

impl Real for f64 {
    fn small_angle() -> Self {
        0.1
    }
    fn structure_tol() -> Self {
        1e-9
    }
    fn log_cutoff() -> Self {
        1e-6
    }
    fn svd_rel_cutoff() -> Self {
        1e-12
    }
    fn max_condition() -> Self {
        1e12
    }
}

impl Real for f32 {
    fn small_angle() -> Self {
        0.5
    }
    fn structure_tol() -> Self {
        1e-4
    }
    fn log_cutoff() -> Self {
        1e-3
    }
    fn svd_rel_cutoff() -> Self {
        1e-6
    }
    fn max_condition() -> Self {
        1e6
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    na::convert(x)
}

/// Lossy conversion back to `f64` (exact for `f64` and `f32`).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    na::try_convert(x).unwrap_or(f64::NAN)
}
