//! Centralised filter over the joint state SE(3)^n.
//!
//! Two equivalent backends are provided. The Hessian backend integrates
//! `P' = -P BBᵀ P + Psym(P U)` with RK4 and applies updates as `P + Q`,
//! solving the correction by Cholesky. The inverse backend tracks
//! `Sigma = P⁻¹` exactly the way the decoupled nodes do (diagonal blocks by
//! RK4, cross blocks by the closed-form exponential transport) and applies
//! updates as `(I + Sigma W)⁻¹ Sigma` with a dense solve. The inverse backend
//! is the reference the decoupled filter is checked against.

use nalgebra::{DMatrix, DVector, Matrix6};

use crate::error::FilterError;
use crate::lie::{exp_se3, exp_u, proj_sym, u_matrix, Pose, StackedTwist};
use crate::measurement::{
    landmark_terms, robot_terms, LandmarkMeasurement, RobotMeasurement, VelocityMeasurement,
};
use crate::scalar::{lit, Real};

/// Joint pose estimate at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEstimate<T: Real> {
    pub poses: Vec<Pose<T>>,
    pub t: T,
}

impl<T: Real> GlobalEstimate<T> {
    pub fn new(poses: Vec<Pose<T>>, t: T) -> Self {
        Self { poses, t }
    }

    pub fn n(&self) -> usize {
        self.poses.len()
    }

    /// `X ⊙ exp(curlywedge(delta))`.
    pub fn retract(&self, delta: &DVector<T>) -> Self {
        let twists = StackedTwist::curlywedge(delta).expect("6n correction vector");
        Self {
            poses: self
                .poses
                .iter()
                .zip(&twists.0)
                .map(|(x, tw)| x.retract(tw))
                .collect(),
            t: self.t,
        }
    }
}

/// 6x6 block `(i, j)` of a block-indexed matrix.
pub fn block<T: Real>(m: &DMatrix<T>, i: usize, j: usize) -> Matrix6<T> {
    m.fixed_view::<6, 6>(6 * i, 6 * j).into_owned()
}

pub fn set_block<T: Real>(m: &mut DMatrix<T>, i: usize, j: usize, b: &Matrix6<T>) {
    m.fixed_view_mut::<6, 6>(6 * i, 6 * j).copy_from(b);
}

pub fn add_block<T: Real>(m: &mut DMatrix<T>, i: usize, j: usize, b: &Matrix6<T>) {
    let mut view = m.fixed_view_mut::<6, 6>(6 * i, 6 * j);
    view += b;
}

/// Largest absolute entry of `M - Mᵀ`.
pub fn symmetry_defect<T: Real>(m: &DMatrix<T>) -> T {
    (m - m.transpose()).abs().max()
}

fn check_spd<T: Real>(
    m: &DMatrix<T>,
    matrix: &'static str,
    robot: Option<usize>,
) -> Result<(), FilterError> {
    if m.iter().all(|x| x.is_finite()) && m.clone().cholesky().is_some() {
        Ok(())
    } else {
        Err(FilterError::NonPositiveDefinite { matrix, robot })
    }
}

macro_rules! block_spd_matrix {
    ($(#[$meta:meta])* $name:ident, $label:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T: Real>(DMatrix<T>);

        impl<T: Real> $name<T> {
            /// Validates shape `6n x 6n`, symmetry and positive definiteness.
            pub fn new(m: DMatrix<T>) -> Result<Self, FilterError> {
                if m.nrows() != m.ncols() || m.nrows() % 6 != 0 || m.nrows() == 0 {
                    return Err(crate::error::LieError::Dimension {
                        expected: 6 * (m.nrows() / 6).max(1),
                        got: m.ncols(),
                    }
                    .into());
                }
                if symmetry_defect(&m) > T::structure_tol() * (T::one() + m.abs().max()) {
                    return Err(FilterError::NonPositiveDefinite {
                        matrix: $label,
                        robot: None,
                    });
                }
                check_spd(&m, $label, None)?;
                Ok(Self(m))
            }

            /// `scale * I_{6n}`.
            pub fn scaled_identity(n: usize, scale: T) -> Self {
                Self(DMatrix::identity(6 * n, 6 * n) * scale)
            }

            pub fn n(&self) -> usize {
                self.0.nrows() / 6
            }

            pub fn block(&self, i: usize, j: usize) -> Matrix6<T> {
                block(&self.0, i, j)
            }

            pub fn matrix(&self) -> &DMatrix<T> {
                &self.0
            }

            pub fn into_inner(self) -> DMatrix<T> {
                self.0
            }
        }
    };
}

block_spd_matrix!(
    /// Matrix form `P` of the value-function Hessian at the estimate.
    HessianMatrix,
    "P"
);
block_spd_matrix!(
    /// `Sigma = P⁻¹`.
    InverseHessian,
    "Sigma"
);

impl<T: Real> HessianMatrix<T> {
    pub fn to_inverse(&self) -> Result<InverseHessian<T>, FilterError> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or(FilterError::NonPositiveDefinite {
                matrix: "P",
                robot: None,
            })?;
        Ok(InverseHessian(proj_sym(&chol.inverse())))
    }
}

impl<T: Real> InverseHessian<T> {
    pub fn to_hessian(&self) -> Result<HessianMatrix<T>, FilterError> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or(FilterError::NonPositiveDefinite {
                matrix: "Sigma",
                robot: None,
            })?;
        Ok(HessianMatrix(proj_sym(&chol.inverse())))
    }
}

/// One classical Runge-Kutta step of `x' = f(x)`.
pub(crate) fn rk4<X, F>(x: &X, dt: X::Scalar, f: F) -> X
where
    X: RkState,
    F: Fn(&X) -> X,
{
    let half = dt * lit(0.5);
    let k1 = f(x);
    let k2 = f(&x.axpy(half, &k1));
    let k3 = f(&x.axpy(half, &k2));
    let k4 = f(&x.axpy(dt, &k3));
    let sixth = dt / lit(6.0);
    let two: X::Scalar = lit(2.0);
    x.axpy(sixth, &k1.axpy(two, &k2).axpy(two, &k3).axpy(lit(1.0), &k4))
}

pub(crate) trait RkState: Sized {
    type Scalar: Real;
    /// `self + a * other`
    fn axpy(&self, a: Self::Scalar, other: &Self) -> Self;
}

impl<T: Real> RkState for DMatrix<T> {
    type Scalar = T;
    fn axpy(&self, a: T, other: &Self) -> Self {
        self + other * a
    }
}

impl<T: Real> RkState for Matrix6<T> {
    type Scalar = T;
    fn axpy(&self, a: T, other: &Self) -> Self {
        self + other * a
    }
}

/// RK4 step of `Sigma_ii' = B Bᵀ - Psym(U Sigma_ii)`, re-symmetrised.
///
/// Shared by the central inverse backend and the decoupled nodes so both
/// integrate the diagonal blocks identically.
pub fn propagate_sigma_diag<T: Real>(
    sigma_ii: &Matrix6<T>,
    u: &VelocityMeasurement<T>,
    dt: T,
) -> Matrix6<T> {
    let bbt = u.b * u.b.transpose();
    let um = u_matrix(&u.u);
    let next = rk4(sigma_ii, dt, |s| bbt - proj_sym(&(um * s)));
    proj_sym(&next)
}

fn check_velocity_inputs<T: Real>(
    n: usize,
    u: &[VelocityMeasurement<T>],
    dt: T,
) -> Result<(), FilterError> {
    if dt <= T::zero() {
        return Err(FilterError::NonPositiveStep(crate::scalar::to_f64(dt)));
    }
    if u.len() != n {
        return Err(FilterError::VelocityCount {
            expected: n,
            got: u.len(),
        });
    }
    for (k, m) in u.iter().enumerate() {
        if m.robot != k {
            return Err(FilterError::WrongRobot {
                node: k,
                got: m.robot,
            });
        }
    }
    Ok(())
}

fn integrate_poses<T: Real>(
    est: &GlobalEstimate<T>,
    u: &[VelocityMeasurement<T>],
    dt: T,
) -> GlobalEstimate<T> {
    GlobalEstimate {
        poses: est
            .poses
            .iter()
            .zip(u)
            .map(|(x, m)| *x * exp_se3(&m.u.scale(dt)))
            .collect(),
        t: est.t + dt,
    }
}

fn check_index(index: usize, n: usize) -> Result<(), FilterError> {
    if index >= n {
        Err(FilterError::IndexError { index, n })
    } else {
        Ok(())
    }
}

/// Integrates the estimate and the Hessian over `[t, t + dt]` with
/// piecewise-constant velocity measurements (one per robot, in robot order).
pub fn propagate<T: Real>(
    est: &GlobalEstimate<T>,
    p: &HessianMatrix<T>,
    u: &[VelocityMeasurement<T>],
    dt: T,
) -> Result<(GlobalEstimate<T>, HessianMatrix<T>), FilterError> {
    let n = est.n();
    check_velocity_inputs(n, u, dt)?;
    let mut bbt = DMatrix::zeros(6 * n, 6 * n);
    let mut um = DMatrix::zeros(6 * n, 6 * n);
    for (k, m) in u.iter().enumerate() {
        set_block(&mut bbt, k, k, &(m.b * m.b.transpose()));
        set_block(&mut um, k, k, &u_matrix(&m.u));
    }
    let next = rk4(&p.0, dt, |p| -(p * &bbt * p) + proj_sym(&(p * &um)));
    let next = proj_sym(&next);
    check_spd(&next, "P", None)?;
    Ok((integrate_poses(est, u, dt), HessianMatrix(next)))
}

fn stacked_gradient<T: Real>(n: usize, parts: &[(usize, nalgebra::Vector6<T>)]) -> DVector<T> {
    let mut g = DVector::zeros(6 * n);
    for (k, gk) in parts {
        g.fixed_rows_mut::<6>(6 * k).copy_from(gk);
    }
    g
}

/// Landmark update on the Hessian backend: `P⁺ = P + Q`,
/// `X⁺ = X ⊙ exp(-(P⁺)⁻¹ g)`.
pub fn landmark_update<T: Real>(
    est: &GlobalEstimate<T>,
    p: &HessianMatrix<T>,
    m: &LandmarkMeasurement<T>,
) -> Result<(GlobalEstimate<T>, HessianMatrix<T>), FilterError> {
    let n = est.n();
    check_index(m.robot, n)?;
    let terms = landmark_terms(&est.poses[m.robot], m)?;
    let mut next = p.0.clone();
    add_block(&mut next, m.robot, m.robot, &terms.hess);
    let g = stacked_gradient(n, &[(m.robot, terms.grad)]);
    hessian_correction(est, next, g, Some(m.robot))
}

/// Robot-to-robot update on the Hessian backend: `P⁺⁺ = P + W`.
pub fn robot_update<T: Real>(
    est: &GlobalEstimate<T>,
    p: &HessianMatrix<T>,
    m: &RobotMeasurement<T>,
) -> Result<(GlobalEstimate<T>, HessianMatrix<T>), FilterError> {
    let n = est.n();
    check_index(m.observer, n)?;
    check_index(m.observed, n)?;
    let (i, j) = (m.observer, m.observed);
    let terms = robot_terms(&est.poses[i], &est.poses[j], m)?;
    let mut next = p.0.clone();
    add_block(&mut next, i, i, &terms.w_ii);
    add_block(&mut next, i, j, &terms.w_ij);
    add_block(&mut next, j, i, &terms.w_ji());
    add_block(&mut next, j, j, &terms.w_jj);
    let g = stacked_gradient(n, &[(i, terms.grad_observer), (j, terms.grad_observed)]);
    hessian_correction(est, next, g, Some(i))
}

fn hessian_correction<T: Real>(
    est: &GlobalEstimate<T>,
    next: DMatrix<T>,
    g: DVector<T>,
    robot: Option<usize>,
) -> Result<(GlobalEstimate<T>, HessianMatrix<T>), FilterError> {
    let next = proj_sym(&next);
    let chol = next
        .clone()
        .cholesky()
        .ok_or(FilterError::NonPositiveDefinite { matrix: "P", robot })?;
    let delta = -chol.solve(&g);
    Ok((est.retract(&delta), HessianMatrix(next)))
}

/// Inverse-backend propagation: diagonal blocks by RK4, cross blocks by
/// `Sigma_ij <- E_i Sigma_ij E_jᵀ` with `E_k = expm(-dt/2 U_k)`.
pub fn propagate_inverse<T: Real>(
    est: &GlobalEstimate<T>,
    sigma: &InverseHessian<T>,
    u: &[VelocityMeasurement<T>],
    dt: T,
) -> Result<(GlobalEstimate<T>, InverseHessian<T>), FilterError> {
    let n = est.n();
    check_velocity_inputs(n, u, dt)?;
    let half = -dt * lit(0.5);
    let transport: Vec<Matrix6<T>> = u.iter().map(|m| exp_u(&m.u, half)).collect();
    let mut next = sigma.0.clone();
    for i in 0..n {
        for j in 0..n {
            let b = if i == j {
                propagate_sigma_diag(&sigma.block(i, i), &u[i], dt)
            } else {
                transport[i] * sigma.block(i, j) * transport[j].transpose()
            };
            set_block(&mut next, i, j, &b);
        }
    }
    check_spd(&next, "Sigma", None)?;
    Ok((integrate_poses(est, u, dt), InverseHessian(next)))
}

/// Dense `(I + Sigma H)⁻¹ Sigma`.
pub fn dense_low_rank_update<T: Real>(sigma: &DMatrix<T>, h: &DMatrix<T>) -> Option<DMatrix<T>> {
    let dim = sigma.nrows();
    let lhs = DMatrix::identity(dim, dim) + sigma * h;
    lhs.lu().solve(sigma)
}

fn inverse_correction<T: Real>(
    est: &GlobalEstimate<T>,
    sigma: &InverseHessian<T>,
    h: DMatrix<T>,
    g: DVector<T>,
    robot: Option<usize>,
) -> Result<(GlobalEstimate<T>, InverseHessian<T>), FilterError> {
    let next = dense_low_rank_update(&sigma.0, &h).ok_or(FilterError::NonPositiveDefinite {
        matrix: "Sigma",
        robot,
    })?;
    let next = proj_sym(&next);
    check_spd(&next, "Sigma", robot)?;
    let delta = -(&next * g);
    Ok((est.retract(&delta), InverseHessian(next)))
}

/// Landmark update on the inverse backend: `Sigma⁺ = (I + Sigma Q)⁻¹ Sigma`.
pub fn landmark_update_inverse<T: Real>(
    est: &GlobalEstimate<T>,
    sigma: &InverseHessian<T>,
    m: &LandmarkMeasurement<T>,
) -> Result<(GlobalEstimate<T>, InverseHessian<T>), FilterError> {
    let n = est.n();
    check_index(m.robot, n)?;
    let terms = landmark_terms(&est.poses[m.robot], m)?;
    let mut q = DMatrix::zeros(6 * n, 6 * n);
    set_block(&mut q, m.robot, m.robot, &terms.hess);
    let g = stacked_gradient(n, &[(m.robot, terms.grad)]);
    inverse_correction(est, sigma, q, g, Some(m.robot))
}

/// Robot update on the inverse backend: `Sigma⁺⁺ = (I + Sigma W)⁻¹ Sigma`.
pub fn robot_update_inverse<T: Real>(
    est: &GlobalEstimate<T>,
    sigma: &InverseHessian<T>,
    m: &RobotMeasurement<T>,
) -> Result<(GlobalEstimate<T>, InverseHessian<T>), FilterError> {
    let n = est.n();
    check_index(m.observer, n)?;
    check_index(m.observed, n)?;
    let (i, j) = (m.observer, m.observed);
    let terms = robot_terms(&est.poses[i], &est.poses[j], m)?;
    let mut w = DMatrix::zeros(6 * n, 6 * n);
    set_block(&mut w, i, i, &terms.w_ii);
    set_block(&mut w, i, j, &terms.w_ij);
    set_block(&mut w, j, i, &terms.w_ji());
    set_block(&mut w, j, j, &terms.w_jj);
    let g = stacked_gradient(n, &[(i, terms.grad_observer), (j, terms.grad_observed)]);
    inverse_correction(est, sigma, w, g, Some(i))
}

/// Which matrix the central filter carries.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend<T: Real> {
    Hessian(HessianMatrix<T>),
    Inverse(InverseHessian<T>),
}

/// Stateful wrapper over the functional central filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralFilter<T: Real> {
    pub estimate: GlobalEstimate<T>,
    pub backend: Backend<T>,
}

impl<T: Real> CentralFilter<T> {
    pub fn with_hessian(estimate: GlobalEstimate<T>, p: HessianMatrix<T>) -> Self {
        Self {
            estimate,
            backend: Backend::Hessian(p),
        }
    }

    pub fn with_inverse(estimate: GlobalEstimate<T>, sigma: InverseHessian<T>) -> Self {
        Self {
            estimate,
            backend: Backend::Inverse(sigma),
        }
    }

    pub fn poses(&self) -> &[Pose<T>] {
        &self.estimate.poses
    }

    /// The carried matrix, converted to `Sigma` if needed.
    pub fn sigma(&self) -> Result<InverseHessian<T>, FilterError> {
        match &self.backend {
            Backend::Hessian(p) => p.to_inverse(),
            Backend::Inverse(s) => Ok(s.clone()),
        }
    }

    pub fn hessian(&self) -> Result<HessianMatrix<T>, FilterError> {
        match &self.backend {
            Backend::Hessian(p) => Ok(p.clone()),
            Backend::Inverse(s) => s.to_hessian(),
        }
    }

    /// The carried matrix as-is.
    pub fn matrix(&self) -> &DMatrix<T> {
        match &self.backend {
            Backend::Hessian(p) => p.matrix(),
            Backend::Inverse(s) => s.matrix(),
        }
    }

    pub fn propagate(&mut self, u: &[VelocityMeasurement<T>], dt: T) -> Result<(), FilterError> {
        match &self.backend {
            Backend::Hessian(p) => {
                let (est, p) = propagate(&self.estimate, p, u, dt)?;
                self.estimate = est;
                self.backend = Backend::Hessian(p);
            }
            Backend::Inverse(s) => {
                let (est, s) = propagate_inverse(&self.estimate, s, u, dt)?;
                self.estimate = est;
                self.backend = Backend::Inverse(s);
            }
        }
        Ok(())
    }

    pub fn landmark_update(&mut self, m: &LandmarkMeasurement<T>) -> Result<(), FilterError> {
        match &self.backend {
            Backend::Hessian(p) => {
                let (est, p) = landmark_update(&self.estimate, p, m)?;
                self.estimate = est;
                self.backend = Backend::Hessian(p);
            }
            Backend::Inverse(s) => {
                let (est, s) = landmark_update_inverse(&self.estimate, s, m)?;
                self.estimate = est;
                self.backend = Backend::Inverse(s);
            }
        }
        Ok(())
    }

    pub fn robot_update(&mut self, m: &RobotMeasurement<T>) -> Result<(), FilterError> {
        match &self.backend {
            Backend::Hessian(p) => {
                let (est, p) = robot_update(&self.estimate, p, m)?;
                self.estimate = est;
                self.backend = Backend::Hessian(p);
            }
            Backend::Inverse(s) => {
                let (est, s) = robot_update_inverse(&self.estimate, s, m)?;
                self.estimate = est;
                self.backend = Backend::Inverse(s);
            }
        }
        Ok(())
    }
}
