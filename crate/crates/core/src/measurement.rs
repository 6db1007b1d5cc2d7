//! Measurement records and the gradient/Hessian terms they contribute.
//!
//! Both filters consume the same per-measurement terms: the left-trivialised
//! gradient of the measurement cost at the current estimate (a 6-vector per
//! involved robot) and its Hessian blocks with respect to the symmetric
//! Cartan connection. They are computed here once so that the central and
//! decoupled filters cannot drift apart on the measurement model.

use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix, Vector3, Vector6};

use crate::error::FilterError;
use crate::lie::{bar, f_op, g_op, proj_se3, proj_sym, tilde, Pose, Twist};
use crate::scalar::{lit, Real};

/// Velocity measurement `u = (omega, v) + B eps` of one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityMeasurement<T: Real> {
    pub robot: usize,
    pub u: Twist<T>,
    pub b: Matrix6<T>,
}

/// Body-frame position `y` of a world-frame landmark seen by `robot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkMeasurement<T: Real> {
    pub robot: usize,
    pub y: Vector3<T>,
    pub landmark: Vector3<T>,
    pub c: Matrix3<T>,
}

/// Position `z` of robot `observed`'s marker, in the body frame of `observer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotMeasurement<T: Real> {
    pub observer: usize,
    pub observed: usize,
    pub z: Vector3<T>,
    pub marker: Vector3<T>,
    pub d: Matrix3<T>,
}

/// Inverse of the homogeneous noise weight `tilde(C) tilde(C)ᵀ`.
pub fn noise_weight<T: Real>(
    c: &Matrix3<T>,
    name: &'static str,
) -> Result<Matrix4<T>, FilterError> {
    let ct = tilde(c);
    (ct * ct.transpose())
        .try_inverse()
        .ok_or(FilterError::SingularNoise(name))
}

/// Gradient and Hessian block of a landmark measurement at the estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkTerms<T: Real> {
    pub grad: Vector6<T>,
    pub hess: Matrix6<T>,
}

/// Gradient blocks and the four nonzero Hessian blocks of a robot
/// measurement; `W_ji = W_ijᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotTerms<T: Real> {
    pub grad_observer: Vector6<T>,
    pub grad_observed: Vector6<T>,
    pub w_ii: Matrix6<T>,
    pub w_ij: Matrix6<T>,
    pub w_jj: Matrix6<T>,
}

impl<T: Real> RobotTerms<T> {
    pub fn w_ji(&self) -> Matrix6<T> {
        self.w_ij.transpose()
    }

    /// `[[W_ii, W_ij], [W_ji, W_jj]]`.
    pub fn block_matrix(&self) -> SMatrix<T, 12, 12> {
        let mut w = SMatrix::<T, 12, 12>::zeros();
        w.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.w_ii);
        w.fixed_view_mut::<6, 6>(0, 6).copy_from(&self.w_ij);
        w.fixed_view_mut::<6, 6>(6, 0).copy_from(&self.w_ji());
        w.fixed_view_mut::<6, 6>(6, 6).copy_from(&self.w_jj);
        w
    }
}

/// Left-trivialised gradient `vee(P(a pᵀ tilde(2 I)))` of a residual whose
/// body-side point is `p` and whose weighted, pulled-back residual is `a`.
fn trivialised_gradient<T: Real>(a: &nalgebra::Vector4<T>, p: &Vector3<T>) -> Vector6<T> {
    let two: T = lit(2.0);
    let m = a * bar(p).transpose() * tilde(&Matrix3::from_diagonal_element(two));
    proj_se3(&m).to_vector()
}

/// Curvature term `Psym(F(p)ᵀ G(a))` of the residual along geodesics.
fn second_order_block<T: Real>(p: &Vector3<T>, a: &nalgebra::Vector4<T>) -> Matrix6<T> {
    let a3 = a.fixed_rows::<3>(0).into_owned();
    proj_sym(&(f_op(p).transpose() * g_op(&a3)))
}

pub fn landmark_terms<T: Real>(
    pose: &Pose<T>,
    m: &LandmarkMeasurement<T>,
) -> Result<LandmarkTerms<T>, FilterError> {
    let weight = noise_weight(&m.c, "C")?;
    let x = pose.to_matrix();
    let residual = x * bar(&m.y) - bar(&m.landmark);
    let a = x.transpose() * weight * residual;
    let fy = f_op(&m.y);
    let gauss_newton = fy.transpose() * x.transpose() * weight * x * fy;
    Ok(LandmarkTerms {
        grad: trivialised_gradient(&a, &m.y),
        hess: second_order_block(&m.y, &a) + gauss_newton,
    })
}

/// Terms of the robot-to-robot cost `1/2 |X_i z - X_j m|^2` weighted by
/// the inverse noise.
///
/// The residual enters the observed robot's blocks with a negative sign,
/// which makes its gradient and the cross block `W_ij` negative relative to
/// the observer's.
pub fn robot_terms<T: Real>(
    observer: &Pose<T>,
    observed: &Pose<T>,
    m: &RobotMeasurement<T>,
) -> Result<RobotTerms<T>, FilterError> {
    if m.observer == m.observed {
        return Err(FilterError::SelfObservation(m.observer));
    }
    let weight = noise_weight(&m.d, "D")?;
    let xi = observer.to_matrix();
    let xj = observed.to_matrix();
    let residual = xi * bar(&m.z) - xj * bar(&m.marker);
    let a_i = xi.transpose() * weight * residual;
    let a_j = xj.transpose() * weight * (-residual);
    let fz = f_op(&m.z);
    let fm = f_op(&m.marker);
    Ok(RobotTerms {
        grad_observer: trivialised_gradient(&a_i, &m.z),
        grad_observed: trivialised_gradient(&a_j, &m.marker),
        w_ii: second_order_block(&m.z, &a_i) + fz.transpose() * xi.transpose() * weight * xi * fz,
        w_ij: -(fz.transpose() * xi.transpose() * weight * xj * fm),
        w_jj: second_order_block(&m.marker, &a_j)
            + fm.transpose() * xj.transpose() * weight * xj * fm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_se3;

    fn pose(g: [f64; 6]) -> Pose<f64> {
        exp_se3(&Twist::from_slice(&g))
    }

    fn landmark_cost(x: &Pose<f64>, m: &LandmarkMeasurement<f64>) -> f64 {
        let r = x.transform_point(&m.y) - m.landmark;
        let cinv = m.c.try_inverse().unwrap();
        0.5 * (cinv * r).norm_squared()
    }

    #[test]
    fn perfect_landmark_measurement_has_zero_gradient() {
        let x = pose([0.2, -0.1, 0.7, 1.0, 2.0, -1.0]);
        let l = Vector3::new(3.0, -1.0, 0.5);
        let m = LandmarkMeasurement {
            robot: 0,
            y: x.inverse().transform_point(&l),
            landmark: l,
            c: Matrix3::identity() * 0.5,
        };
        let terms = landmark_terms(&x, &m).unwrap();
        assert!(terms.grad.norm() < 1e-12);
        let w = noise_weight(&m.c, "C").unwrap();
        let xm = x.to_matrix();
        let fy = f_op(&m.y);
        let gn = fy.transpose() * xm.transpose() * w * xm * fy;
        assert!((terms.hess - gn).norm() < 1e-10);
    }

    #[test]
    fn landmark_gradient_matches_central_differences() {
        let x = pose([0.3, 0.2, -0.5, 1.0, -2.0, 0.4]);
        let m = LandmarkMeasurement {
            robot: 0,
            y: Vector3::new(2.0, 1.0, -0.3),
            landmark: Vector3::new(4.0, 0.0, 1.0),
            c: Matrix3::new(0.5, 0.1, 0.0, 0.0, 0.4, 0.05, 0.0, 0.0, 0.6),
        };
        let grad = landmark_terms(&x, &m).unwrap().grad;
        let h = 1e-6;
        for k in 0..6 {
            let mut e = [0.0; 6];
            e[k] = h;
            let plus = landmark_cost(&x.retract(&Twist::from_slice(&e)), &m);
            e[k] = -h;
            let minus = landmark_cost(&x.retract(&Twist::from_slice(&e)), &m);
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-6 * grad.norm(),
                "axis {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    fn second_difference(cost: impl Fn(f64) -> f64) -> f64 {
        let h = 1e-4;
        (cost(h) - 2.0 * cost(0.0) + cost(-h)) / (h * h)
    }

    #[test]
    fn landmark_hessian_matches_geodesic_second_derivative() {
        let x = pose([0.3, 0.2, -0.5, 1.0, -2.0, 0.4]);
        let m = LandmarkMeasurement {
            robot: 0,
            y: Vector3::new(2.0, 1.0, -0.3),
            landmark: Vector3::new(4.0, 0.0, 1.0),
            c: Matrix3::new(0.5, 0.1, 0.0, 0.0, 0.4, 0.05, 0.0, 0.0, 0.6),
        };
        let hess = landmark_terms(&x, &m).unwrap().hess;
        for dir in [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.3, -0.2, 0.5, 1.0, 0.4, -0.7],
        ] {
            let v = Vector6::from_row_slice(&dir);
            let fd =
                second_difference(|s| landmark_cost(&x.retract(&Twist::from_vector(&(v * s))), &m));
            let exact = (v.transpose() * hess * v)[0];
            assert!(
                (fd - exact).abs() < 1e-5 * exact.abs().max(1.0),
                "{fd} vs {exact}"
            );
        }
    }

    #[test]
    fn robot_hessian_matches_geodesic_second_derivative() {
        let xi = pose([0.1, 0.0, 0.4, 1.0, 0.0, 0.0]);
        let xj = pose([0.0, 0.2, -0.3, 3.0, 1.0, 0.5]);
        let m = RobotMeasurement {
            observer: 0,
            observed: 1,
            z: Vector3::new(2.0, 1.0, 0.2),
            marker: Vector3::new(0.3, 0.0, 0.1),
            d: Matrix3::new(0.5, 0.0, 0.1, 0.0, 0.6, 0.0, 0.0, 0.0, 0.4),
        };
        let dinv = m.d.try_inverse().unwrap();
        let cost = |a: &Pose<f64>, b: &Pose<f64>| {
            0.5 * (dinv * (a.transform_point(&m.z) - b.transform_point(&m.marker))).norm_squared()
        };
        let terms = robot_terms(&xi, &xj, &m).unwrap();
        let w = terms.block_matrix();
        let dirs = [
            [0.3, -0.2, 0.5, 1.0, 0.4, -0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.4, 0.1, 0.2, 0.5, -1.0, 0.3],
            [
                0.2, 0.1, -0.3, -0.5, 0.2, 0.9, 0.6, -0.2, 0.1, 0.3, 0.8, -0.4,
            ],
        ];
        for dir in dirs {
            let v = SMatrix::<f64, 12, 1>::from_row_slice(&dir);
            let vi = Twist::from_slice(&dir[..6]);
            let vj = Twist::from_slice(&dir[6..]);
            let fd =
                second_difference(|s| cost(&xi.retract(&vi.scale(s)), &xj.retract(&vj.scale(s))));
            let exact = (v.transpose() * w * v)[0];
            assert!(
                (fd - exact).abs() < 1e-5 * exact.abs().max(1.0),
                "{fd} vs {exact}"
            );
        }
        let h = 1e-6;
        for k in 0..12 {
            let mut e = [0.0; 12];
            e[k] = h;
            let plus = cost(
                &xi.retract(&Twist::from_slice(&e[..6])),
                &xj.retract(&Twist::from_slice(&e[6..])),
            );
            e[k] = -h;
            let minus = cost(
                &xi.retract(&Twist::from_slice(&e[..6])),
                &xj.retract(&Twist::from_slice(&e[6..])),
            );
            let fd = (plus - minus) / (2.0 * h);
            let g = if k < 6 {
                terms.grad_observer[k]
            } else {
                terms.grad_observed[k - 6]
            };
            assert!((fd - g).abs() < 1e-6, "axis {k}: {fd} vs {g}");
        }
    }

    #[test]
    fn robot_terms_reject_self_observation() {
        let m = RobotMeasurement::<f64> {
            observer: 1,
            observed: 1,
            z: Vector3::zeros(),
            marker: Vector3::zeros(),
            d: Matrix3::identity(),
        };
        let x = Pose::identity();
        assert_eq!(
            robot_terms(&x, &x, &m),
            Err(FilterError::SelfObservation(1))
        );
    }

    #[test]
    fn singular_noise_is_rejected() {
        let m = LandmarkMeasurement::<f64> {
            robot: 0,
            y: Vector3::zeros(),
            landmark: Vector3::zeros(),
            c: Matrix3::zeros(),
        };
        assert_eq!(
            landmark_terms(&Pose::identity(), &m),
            Err(FilterError::SingularNoise("C"))
        );
    }

    #[test]
    fn consistent_robot_measurement_has_zero_gradients() {
        let xi = pose([0.1, 0.0, 0.4, 1.0, 0.0, 0.0]);
        let xj = pose([0.0, 0.2, -0.3, 3.0, 1.0, 0.5]);
        let marker = Vector3::new(0.3, 0.0, 0.1);
        let m = RobotMeasurement {
            observer: 0,
            observed: 1,
            z: xi.inverse().transform_point(&xj.transform_point(&marker)),
            marker,
            d: Matrix3::identity() * 0.5,
        };
        let t = robot_terms(&xi, &xj, &m).unwrap();
        assert!(t.grad_observer.norm() < 1e-12);
        assert!(t.grad_observed.norm() < 1e-12);
        let w = t.block_matrix();
        assert!((w - w.transpose()).norm() < 1e-12);
    }
}
