//! Matrix Lie-group toolkit for SO(3), SE(3) and se(3).
//!
//! Twists are ordered `(omega, v)`: angular part first, linear part second.
//! With this ordering the left-invariant metric on SE(3) is the plain
//! Euclidean inner product of the 6-vectors, and the Hessian/covariance
//! blocks used by the filters are indexed the same way.

use std::ops::Mul;

use nalgebra::{
    allocator::Allocator, DMatrix, DVector, DefaultAllocator, Dim, Matrix3, Matrix4, Matrix4x6,
    Matrix6, OMatrix, Vector3, Vector4, Vector6,
};

use crate::error::LieError;
use crate::scalar::{lit, to_f64, Real};

/// Skew-symmetric matrix of `w`, so that `hat3(w) * x == w.cross(x)`.
pub fn hat3<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -w.z, w.y, w.z, z, -w.x, -w.y, w.x, z)
}

/// Inverse of [`hat3`]. Rejects matrices with a non-negligible symmetric part.
pub fn vee3<T: Real>(m: &Matrix3<T>) -> Result<Vector3<T>, LieError> {
    let defect = (m + m.transpose()).abs().max() * lit(0.5);
    if defect > T::structure_tol() {
        return Err(LieError::NotSkew {
            defect: to_f64(defect),
        });
    }
    Ok(vex_unchecked(m))
}

/// Reads the axial vector off the skew part of `m` without validation.
fn vex_unchecked<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half: T = lit(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Homogeneous point `[v; 1]`.
pub fn bar<T: Real>(v: &Vector3<T>) -> Vector4<T> {
    Vector4::new(v.x, v.y, v.z, T::one())
}

/// Homogeneous direction `[v; 0]`.
pub fn ring<T: Real>(v: &Vector3<T>) -> Vector4<T> {
    Vector4::new(v.x, v.y, v.z, T::zero())
}

/// Embeds a 3x3 matrix as `[[M, 0], [0, 1]]`.
pub fn tilde<T: Real>(m: &Matrix3<T>) -> Matrix4<T> {
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(m);
    out
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real>(Matrix3<T>);

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `RᵀR = I` and `det R = 1`.
    pub fn try_new(m: Matrix3<T>) -> Result<Self, LieError> {
        let orthogonality = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if orthogonality > T::structure_tol() || (det - T::one()).abs() > T::structure_tol() {
            return Err(LieError::NotRotation {
                orthogonality: to_f64(orthogonality),
                det: to_f64(det),
            });
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    /// Rodrigues' formula for `exp(hat3(omega))`.
    pub fn exp(omega: &Vector3<T>) -> Self {
        let (a, b, _) = rodrigues_coefficients(omega.norm());
        let w = hat3(omega);
        Self(Matrix3::identity() + w * a + w * w * b)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Geodesic angle from the identity, in `[0, pi]`.
    pub fn angle(&self) -> T {
        let r = &self.0;
        let s = vex_unchecked(r).norm();
        let c = (r.trace() - T::one()) * lit(0.5);
        s.atan2(c)
    }
}

impl<T: Real> Mul for Rotation<T> {
    type Output = Rotation<T>;
    fn mul(self, rhs: Self) -> Self {
        Rotation(self.0 * rhs.0)
    }
}

/// Rigid-body pose `[[R, p], [0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Rotation<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(p: Vector3<T>) -> Self {
        Self::new(Rotation::identity(), p)
    }

    /// Parses a homogeneous matrix, validating both the rotation block and
    /// the `[0 0 0 1]` bottom row.
    pub fn from_matrix(m: &Matrix4<T>) -> Result<Self, LieError> {
        let bottom = Vector4::new(m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - T::one());
        let defect = bottom.abs().max();
        if defect > T::structure_tol() {
            return Err(LieError::NotSe3 {
                defect: to_f64(defect),
            });
        }
        let rotation = Rotation::try_new(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Self::new(rotation, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    pub fn to_matrix(&self) -> Matrix4<T> {
        let mut out = tilde(self.rotation.matrix());
        out.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&self.translation);
        out
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Self::new(rt, -(rt.matrix() * self.translation))
    }

    /// Applies the pose to a point given in body coordinates.
    pub fn transform_point(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation.matrix() * x + self.translation
    }

    pub fn exp(twist: &Twist<T>) -> Self {
        exp_se3(twist)
    }

    pub fn log(&self) -> Result<Twist<T>, LieError> {
        log_se3(self)
    }

    /// Right-perturbation `self * exp(twist)`.
    pub fn retract(&self, twist: &Twist<T>) -> Self {
        *self * exp_se3(twist)
    }
}

impl<T: Real> Mul for Pose<T> {
    type Output = Pose<T>;
    fn mul(self, rhs: Self) -> Self {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation.matrix() * rhs.translation + self.translation,
        )
    }
}

/// Element of se(3) as `(omega, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<T: Real> {
    pub omega: Vector3<T>,
    pub v: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(omega: Vector3<T>, v: Vector3<T>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(x: &Vector6<T>) -> Self {
        Self::new(
            x.fixed_rows::<3>(0).into_owned(),
            x.fixed_rows::<3>(3).into_owned(),
        )
    }

    pub fn from_slice(x: &[T]) -> Self {
        Self::new(
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.v.x,
            self.v.y,
            self.v.z,
        )
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.omega * s, self.v * s)
    }

    pub fn wedge(&self) -> Matrix4<T> {
        wedge(&self.to_vector())
    }
}

/// `gamma^` : R^6 -> se(3).
pub fn wedge<T: Real>(gamma: &Vector6<T>) -> Matrix4<T> {
    let mut out = Matrix4::zeros();
    let omega = gamma.fixed_rows::<3>(0).into_owned();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&omega));
    out.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&gamma.fixed_rows::<3>(3));
    out
}

/// `Gamma^v` : se(3) -> R^6. Rejects a nonzero bottom row or a non-skew
/// rotation block.
pub fn vee<T: Real>(m: &Matrix4<T>) -> Result<Vector6<T>, LieError> {
    let defect = m.fixed_view::<1, 4>(3, 0).abs().max();
    if defect > T::structure_tol() {
        return Err(LieError::NotSe3 {
            defect: to_f64(defect),
        });
    }
    let omega = vee3(&m.fixed_view::<3, 3>(0, 0).into_owned())?;
    Ok(Vector6::new(
        omega.x,
        omega.y,
        omega.z,
        m[(0, 3)],
        m[(1, 3)],
        m[(2, 3)],
    ))
}

/// An ordered stack of `n` twists, one per robot.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedTwist<T: Real>(pub Vec<Twist<T>>);

impl<T: Real> StackedTwist<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Twist::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Concatenates the per-robot 6-vectors in robot-index order.
    pub fn curlyvee(&self) -> DVector<T> {
        let mut out = DVector::zeros(6 * self.0.len());
        for (i, tw) in self.0.iter().enumerate() {
            out.fixed_rows_mut::<6>(6 * i).copy_from(&tw.to_vector());
        }
        out
    }

    pub fn curlywedge(x: &DVector<T>) -> Result<Self, LieError> {
        if x.len() % 6 != 0 {
            return Err(LieError::Dimension {
                expected: 6 * (x.len() / 6 + 1),
                got: x.len(),
            });
        }
        Ok(Self(
            x.as_slice()
                .chunks_exact(6)
                .map(Twist::from_slice)
                .collect(),
        ))
    }
}

/// Even power series `sum_k coeffs[k] * t2^k` by Horner's rule.
fn even_series<T: Real>(t2: T, coeffs: &[f64]) -> T {
    coeffs
        .iter()
        .rev()
        .fold(T::zero(), |acc, &k| acc * t2 + lit(k))
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
///
/// The last two cancel catastrophically for small `t`, so the series is used
/// well beyond the point where the closed forms stop dividing by zero.
fn rodrigues_coefficients<T: Real>(theta: T) -> (T, T, T) {
    let t2 = theta * theta;
    if theta < T::small_angle() {
        (
            even_series(
                t2,
                &[
                    1.0,
                    -1.0 / 6.0,
                    1.0 / 120.0,
                    -1.0 / 5040.0,
                    1.0 / 362880.0,
                    -1.0 / 39916800.0,
                ],
            ),
            even_series(
                t2,
                &[
                    0.5,
                    -1.0 / 24.0,
                    1.0 / 720.0,
                    -1.0 / 40320.0,
                    1.0 / 3628800.0,
                    -1.0 / 479001600.0,
                ],
            ),
            even_series(
                t2,
                &[
                    1.0 / 6.0,
                    -1.0 / 120.0,
                    1.0 / 5040.0,
                    -1.0 / 362880.0,
                    1.0 / 39916800.0,
                    -1.0 / 6227020800.0,
                ],
            ),
        )
    } else {
        let s = theta.sin();
        let half = (theta * lit(0.5)).sin();
        (
            s / theta,
            lit::<T>(2.0) * half * half / t2,
            (theta - s) / (t2 * theta),
        )
    }
}

/// Closed-form matrix exponential of `wedge(gamma)`.
pub fn exp_se3<T: Real>(gamma: &Twist<T>) -> Pose<T> {
    let (a, b, c) = rodrigues_coefficients(gamma.omega.norm());
    let w = hat3(&gamma.omega);
    let w2 = w * w;
    let r = Matrix3::identity() + w * a + w2 * b;
    let left_jacobian = Matrix3::identity() + w * b + w2 * c;
    Pose::new(Rotation::from_matrix_unchecked(r), left_jacobian * gamma.v)
}

/// Principal matrix logarithm. Fails when the rotation angle is within
/// [`Real::log_cutoff`] of pi.
pub fn log_se3<T: Real>(x: &Pose<T>) -> Result<Twist<T>, LieError> {
    let r = x.rotation.matrix();
    let axis_sin = vex_unchecked(r);
    let s = axis_sin.norm();
    let c = (r.trace() - T::one()) * lit(0.5);
    let theta = s.atan2(c);
    if theta >= T::pi() - T::log_cutoff() {
        return Err(LieError::AngleNearPi {
            angle: to_f64(theta),
        });
    }
    let t2 = theta * theta;
    // d = (1 - (t/2) cot(t/2)) / t^2
    let (omega, d) = if theta < T::small_angle() {
        (
            axis_sin
                * even_series(
                    t2,
                    &[
                        1.0,
                        1.0 / 6.0,
                        7.0 / 360.0,
                        31.0 / 15120.0,
                        127.0 / 604800.0,
                        73.0 / 3421440.0,
                    ],
                ),
            even_series(
                t2,
                &[
                    1.0 / 12.0,
                    1.0 / 720.0,
                    1.0 / 30240.0,
                    1.0 / 1209600.0,
                    1.0 / 47900160.0,
                ],
            ),
        )
    } else {
        let (sh, ch) = (theta * lit(0.5)).sin_cos();
        (
            axis_sin * (theta / s),
            (T::one() - theta * lit(0.5) * ch / sh) / t2,
        )
    };
    let w = hat3(&omega);
    let inv_left_jacobian = Matrix3::<T>::identity() - w * lit::<T>(0.5) + w * w * d;
    Ok(Twist::new(omega, inv_left_jacobian * x.translation))
}

/// `F(v)` with `Gamma * bar(v) = F(v) * Gamma^v`.
pub fn f_op<T: Real>(v: &Vector3<T>) -> Matrix4x6<T> {
    let mut out = Matrix4x6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat3(v)));
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::identity());
    out
}

/// `G(v)` with `Gamma^T * bar(v) = G(v) * Gamma^v`.
pub fn g_op<T: Real>(v: &Vector3<T>) -> Matrix4x6<T> {
    let mut out = Matrix4x6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(v));
    out.fixed_view_mut::<1, 3>(3, 3).copy_from(&v.transpose());
    out
}

pub fn proj_sym<T: Real, D: Dim>(m: &OMatrix<T, D, D>) -> OMatrix<T, D, D>
where
    DefaultAllocator: Allocator<D, D>,
{
    (m + m.transpose()) * lit::<T>(0.5)
}

pub fn proj_asym<T: Real, D: Dim>(m: &OMatrix<T, D, D>) -> OMatrix<T, D, D>
where
    DefaultAllocator: Allocator<D, D>,
{
    (m - m.transpose()) * lit::<T>(0.5)
}

/// Frobenius-orthogonal projection of a 4x4 matrix onto se(3): keeps the
/// skew part of the rotation block and the translation column.
pub fn proj_se3<T: Real>(m: &Matrix4<T>) -> Twist<T> {
    let a = m.fixed_view::<3, 3>(0, 0).into_owned();
    Twist::new(
        vex_unchecked(&proj_asym(&a)),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
    )
}

/// Left-invariant metric on se(3) in vector form.
pub fn metric_inner<T: Real>(a: &Twist<T>, b: &Twist<T>) -> T {
    a.to_vector().dot(&b.to_vector())
}

/// The same metric as a weighted trace `tr(diag(1/2, 1/2, 1/2, 1) Aᵀ B)`.
pub fn metric_trace_form<T: Real>(a: &Matrix4<T>, b: &Matrix4<T>) -> T {
    let half: T = lit(0.5);
    let weight = Matrix4::from_diagonal(&Vector4::new(half, half, half, T::one()));
    (weight * a.transpose() * b).trace()
}

/// Weighted distance between two pose stacks,
/// `sqrt(xiᵀ P xi)` with `xi = curlyvee(log(X2⁻¹ ⊙ X1))`.
pub fn distance_dp<T: Real>(
    x1: &[Pose<T>],
    x2: &[Pose<T>],
    weight: &DMatrix<T>,
) -> Result<T, LieError> {
    if x1.len() != x2.len() {
        return Err(LieError::Dimension {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    let dim = 6 * x1.len();
    if weight.nrows() != dim || weight.ncols() != dim {
        return Err(LieError::Dimension {
            expected: dim,
            got: weight.nrows(),
        });
    }
    if weight.clone().cholesky().is_none() {
        return Err(LieError::NotPositiveDefinite);
    }
    let logs = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| log_se3(&(b.inverse() * *a)))
        .collect::<Result<Vec<_>, _>>()?;
    let xi = StackedTwist(logs).curlyvee();
    Ok((weight * &xi).dot(&xi).max(T::zero()).sqrt())
}

/// `U(u) = [[omega^, 0], [v^, omega^]]`, the generator driving the
/// covariance transport along a measured twist.
pub fn u_matrix<T: Real>(u: &Twist<T>) -> Matrix6<T> {
    let w = hat3(&u.omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat3(&u.v));
    out
}

/// Adjoint `[[R, 0], [p^ R, R]]` of a pose in `(omega, v)` ordering.
pub fn adjoint<T: Real>(x: &Pose<T>) -> Matrix6<T> {
    let r = x.rotation.matrix();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(hat3(&x.translation) * r));
    out
}

/// Closed form of `expm(s * U(u))`.
///
/// `U(u)` is the adjoint representation of `u`, so its exponential is the
/// adjoint of `exp_se3(s u)`.
pub fn exp_u<T: Real>(u: &Twist<T>, s: T) -> Matrix6<T> {
    adjoint(&exp_se3(&u.scale(s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Dense scaling-and-squaring Taylor exponential, independent of the
    /// closed forms above.
    fn expm_dense(a: &Matrix4<f64>) -> Matrix4<f64> {
        let norm = a.abs().max().max(1e-300);
        let squarings = (norm.log2().ceil().max(0.0) as u32) + 4;
        let scaled = a / 2f64.powi(squarings as i32);
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..30 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn exp_log_precise_across_series_switch() {
        // the closed-form coefficients lose digits quadratically as t -> 0
        let axis = Vector3::new(0.48, -0.6, 0.64);
        let v = Vector3::new(4.0, -3.0, 5.0);
        for theta in [1e-9, 1e-7, 1e-5, 1e-3, 0.0999, 0.1001, 0.5, 3.0] {
            let g = Twist::new(axis * theta, v);
            let x = exp_se3(&g);
            assert!(
                (x.to_matrix() - expm_dense(&wedge(&g.to_vector())))
                    .abs()
                    .max()
                    < 1e-13
            );
            let back = log_se3(&x).unwrap();
            assert!(
                (back.to_vector() - g.to_vector()).norm() < 1e-13,
                "theta {theta}"
            );
        }
    }

    #[test]
    fn hat3_zero_and_roundtrip() {
        assert_eq!(hat3(&Vector3::<f64>::zeros()), Matrix3::zeros());
        let w = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee3(&hat3(&w)).unwrap(), w);
    }

    #[test]
    fn hat3_is_cross_product() {
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        assert_eq!(hat3(&a) * b, a.cross(&b));
        assert_eq!(hat3(&a) * b, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn vee3_rejects_symmetric_input() {
        let m = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(vee3(&m), Err(LieError::NotSkew { .. })));
    }

    #[test]
    fn wedge_vee_roundtrip_and_zero() {
        assert_eq!(wedge(&Vector6::<f64>::zeros()), Matrix4::zeros());
        let g = Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(vee(&wedge(&g)).unwrap(), g);
    }

    #[test]
    fn vee_rejects_bottom_row() {
        let mut m = wedge(&Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0));
        m[(3, 1)] = 1e-3;
        assert!(matches!(vee(&m), Err(LieError::NotSe3 { .. })));
    }

    #[test]
    fn curlyvee_orders_by_robot() {
        let g1 = Twist::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g2 = Twist::from_slice(&[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let stack = StackedTwist(vec![g1, g2]);
        let v = stack.curlyvee();
        assert_eq!(v.len(), 12);
        assert_eq!(v.as_slice()[..6], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(StackedTwist::curlywedge(&v).unwrap(), stack);
        assert!(StackedTwist::curlywedge(&DVector::<f64>::zeros(7)).is_err());
    }

    #[test]
    fn exp_of_zero_and_pure_translation() {
        assert_eq!(exp_se3(&Twist::<f64>::zero()), Pose::identity());
        let x = exp_se3(&Twist::from_slice(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]));
        assert_eq!(*x.rotation.matrix(), Matrix3::identity());
        assert_eq!(x.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_quarter_turn_matches_dense_oracle() {
        let tw = Twist::from_slice(&[0.0, 0.0, PI / 2.0, 0.0, 0.0, 0.0]);
        let x = exp_se3(&tw).to_matrix();
        let oracle = expm_dense(&tw.wedge());
        assert!((x - oracle).norm() < 1e-12);
        let expected = Matrix4::new(
            0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        );
        assert!((x - expected).norm() < 1e-12);
    }

    #[test]
    fn exp_matches_dense_oracle_generic_twists() {
        for g in [
            [0.3, -0.2, 0.5, 1.0, -2.0, 0.5],
            [1e-8, 2e-8, -1e-8, 0.1, 0.2, 0.3],
            [2.5, 0.4, -0.9, -3.0, 1.0, 2.0],
        ] {
            let tw = Twist::from_slice(&g);
            let diff = exp_se3(&tw).to_matrix() - expm_dense(&tw.wedge());
            assert!(diff.norm() < 1e-11, "{g:?}: {}", diff.norm());
        }
    }

    #[test]
    fn log_identity_and_roundtrip() {
        assert_eq!(log_se3(&Pose::<f64>::identity()).unwrap(), Twist::zero());
        let omega = Vector3::<f64>::new(0.1, -0.2, 0.2);
        assert!((omega.norm() - 0.3).abs() < 1e-15);
        let tw = Twist::new(omega, Vector3::new(1.0, 2.0, -0.5));
        let back = log_se3(&exp_se3(&tw)).unwrap();
        assert!((back.to_vector() - tw.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn log_near_pi_is_rejected() {
        let tw = Twist::from_slice(&[0.0, PI - 1e-8, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            log_se3(&exp_se3(&tw)),
            Err(LieError::AngleNearPi { .. })
        ));
    }

    #[test]
    fn pose_from_matrix_validates() {
        let x = exp_se3(&Twist::from_slice(&[0.3, 0.1, -0.4, 1.0, 2.0, 3.0]));
        assert_eq!(Pose::from_matrix(&x.to_matrix()).unwrap(), x);
        let mut bad = x.to_matrix();
        bad[(0, 0)] += 1e-3;
        assert!(matches!(
            Pose::from_matrix(&bad),
            Err(LieError::NotRotation { .. })
        ));
        let inv = x * x.inverse();
        assert!((inv.to_matrix() - Matrix4::identity()).norm() < 1e-12);
    }

    #[test]
    fn f_op_at_zero() {
        let f = f_op(&Vector3::<f64>::zeros());
        let mut expected = Matrix4x6::zeros();
        expected
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&Matrix3::identity());
        assert_eq!(f, expected);
    }

    #[test]
    fn f_and_g_identities_on_integers() {
        let g = Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let v = Vector3::new(7.0, 8.0, 9.0);
        let gamma = wedge(&g);
        assert_eq!(gamma * bar(&v), f_op(&v) * g);
        assert_eq!(gamma.transpose() * bar(&v), g_op(&v) * g);
    }

    #[test]
    fn projections() {
        let skew = hat3(&Vector3::new(1.0, -2.0, 0.5));
        assert_eq!(proj_sym(&skew), Matrix3::zeros());
        assert_eq!(proj_se3(&Matrix4::<f64>::identity()), Twist::zero());
        let m = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0);
        assert_eq!(proj_sym(&m) + proj_asym(&m), m);
    }

    #[test]
    fn proj_se3_is_frobenius_orthogonal() {
        let m = Matrix4::new(
            1.0, 2.0, -3.0, 0.5, 0.7, -1.1, 2.0, 1.5, 0.3, 0.9, 4.0, -2.5, 1.0, 2.0, 3.0, 4.0,
        );
        let p = proj_se3(&m);
        let a = m.fixed_view::<3, 3>(0, 0);
        let expected = vee3(&((a - a.transpose()) * 0.5)).unwrap();
        assert_eq!(p.omega, expected);
        let residual = m - p.wedge();
        for k in 0..6 {
            let mut basis = Vector6::zeros();
            basis[k] = 1.0;
            let inner: f64 = (residual.transpose() * wedge(&basis)).trace();
            assert!(inner.abs() < 1e-14);
        }
    }

    #[test]
    fn metric_forms_agree() {
        let a = Twist::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(metric_inner(&a, &a), 1.0);
        let b = Twist::<f64>::from_slice(&[0.3, -1.0, 2.0, 0.5, 0.25, -4.0]);
        let c = Twist::from_slice(&[1.5, 0.2, -0.7, 3.0, -1.0, 2.0]);
        let trace = metric_trace_form(&b.wedge(), &c.wedge());
        assert!((trace - metric_inner(&b, &c)).abs() < 1e-12);
    }

    #[test]
    fn distance_dp_zero_on_diagonal() {
        let x = vec![
            exp_se3(&Twist::from_slice(&[0.1, 0.2, 0.3, 1.0, 2.0, 3.0])),
            Pose::identity(),
        ];
        let eye = DMatrix::<f64>::identity(12, 12);
        assert_eq!(distance_dp(&x, &x, &eye).unwrap(), 0.0);
        let y = vec![
            x[0],
            exp_se3(&Twist::from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0])),
        ];
        assert!((distance_dp(&y, &x, &eye).unwrap() - 1.0).abs() < 1e-12);
        let indefinite = -DMatrix::identity(12, 12);
        assert_eq!(
            distance_dp(&x, &x, &indefinite),
            Err(LieError::NotPositiveDefinite)
        );
    }

    #[test]
    fn u_matrix_blocks() {
        assert_eq!(u_matrix(&Twist::<f64>::zero()), Matrix6::zeros());
        let u = u_matrix(&Twist::from_slice(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]));
        assert_eq!(
            u.fixed_view::<3, 3>(3, 0).into_owned(),
            hat3(&Vector3::new(1.0, 2.0, 3.0))
        );
        let u = u_matrix(&Twist::from_slice(&[0.4, -0.1, 0.9, 1.0, 2.0, 3.0]));
        assert_eq!(u.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::zeros());
    }

    #[test]
    fn exp_u_matches_dense_series() {
        let tw = Twist::from_slice(&[0.4, -0.3, 0.9, 1.0, -2.0, 0.5]);
        let s = -0.35;
        let a = u_matrix(&tw) * s;
        let mut term = Matrix6::identity();
        let mut sum = Matrix6::identity();
        for k in 1..40 {
            term = term * a / k as f64;
            sum += term;
        }
        assert!((exp_u(&tw, s) - sum).norm() < 1e-13);
    }

    #[test]
    fn generic_over_f32() {
        let tw = Twist::<f32>::from_slice(&[0.1, 0.2, -0.1, 1.0, 0.5, 0.25]);
        let back = log_se3(&exp_se3(&tw)).unwrap();
        assert!((back.to_vector() - tw.to_vector()).norm() < 1e-5);
    }
}
