//! Numerical self-checks of the filter building blocks against independent
//! oracles: dense matrix products, finite differences and dense inverses.

use game_core::decoupled::woodbury_update;
use game_core::lie::{bar, exp_se3, f_op, g_op, log_se3, proj_se3, wedge, Pose, Twist};
use game_core::measurement::{landmark_terms, robot_terms, LandmarkMeasurement, RobotMeasurement};
use game_sim::rng::CounterRng;
use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix4x6, SMatrix, Vector3, Vector6};

/// Deliberate defects for checking that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates `F(v)` wherever the suites use it.
    FlipF,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<12} {:>4} cases  max error {:.3e}  (tol {:.0e})  {}",
            self.name,
            self.cases,
            self.max_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn f_checked(v: &Vector3<f64>, fault: Fault) -> Matrix4x6<f64> {
    match fault {
        Fault::None => f_op(v),
        Fault::FlipF => -f_op(v),
    }
}

fn uniform(rng: &mut CounterRng, scale: f64) -> f64 {
    scale * (2.0 * rng.uniform() - 1.0)
}

fn vec3(rng: &mut CounterRng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| uniform(rng, scale))
}

fn pose(rng: &mut CounterRng) -> Pose<f64> {
    exp_se3(&Twist::new(vec3(rng, 1.0), vec3(rng, 3.0)))
}

fn noise(rng: &mut CounterRng) -> Matrix3<f64> {
    Matrix3::from_diagonal_element(0.5) + Matrix3::from_fn(|_, _| uniform(rng, 0.1))
}

fn weighted_sq(c: &Matrix3<f64>, r: &Vector3<f64>) -> f64 {
    0.5 * (c.try_inverse().expect("noise matrix invertible") * r).norm_squared()
}

fn landmark_case(rng: &mut CounterRng) -> (Pose<f64>, LandmarkMeasurement<f64>) {
    let x = pose(rng);
    let m = LandmarkMeasurement {
        robot: 0,
        y: vec3(rng, 4.0),
        landmark: vec3(rng, 6.0),
        c: noise(rng),
    };
    (x, m)
}

fn robot_case(rng: &mut CounterRng) -> (Pose<f64>, Pose<f64>, RobotMeasurement<f64>) {
    let (xi, xj) = (pose(rng), pose(rng));
    let m = RobotMeasurement {
        observer: 0,
        observed: 1,
        z: vec3(rng, 4.0),
        marker: vec3(rng, 0.5),
        d: noise(rng),
    };
    (xi, xj, m)
}

fn landmark_cost(x: &Pose<f64>, m: &LandmarkMeasurement<f64>) -> f64 {
    weighted_sq(&m.c, &(x.transform_point(&m.y) - m.landmark))
}

fn robot_cost(xi: &Pose<f64>, xj: &Pose<f64>, m: &RobotMeasurement<f64>) -> f64 {
    weighted_sq(
        &m.d,
        &(xi.transform_point(&m.z) - xj.transform_point(&m.marker)),
    )
}

/// Cost along `X_k exp(s v_k)` for stacked directions `v`.
fn along<const D: usize>(
    cost: &dyn Fn(&[Pose<f64>]) -> f64,
    at: &[Pose<f64>],
    v: &SMatrix<f64, D, 1>,
    s: f64,
) -> f64 {
    let moved: Vec<Pose<f64>> = at
        .iter()
        .enumerate()
        .map(|(k, x)| x.retract(&Twist::from_slice(&v.as_slice()[6 * k..6 * k + 6]).scale(s)))
        .collect();
    cost(&moved)
}

fn fd_gradient<const D: usize>(
    cost: &dyn Fn(&[Pose<f64>]) -> f64,
    at: &[Pose<f64>],
) -> SMatrix<f64, D, 1> {
    let h = 1e-6;
    SMatrix::from_fn(|a, _| {
        let e = SMatrix::<f64, D, 1>::from_fn(|k, _| if k == a { 1.0 } else { 0.0 });
        (along(cost, at, &e, h) - along(cost, at, &e, -h)) / (2.0 * h)
    })
}

/// Hessian from second differences along geodesics, entries by polarisation.
fn fd_hessian<const D: usize>(
    cost: &dyn Fn(&[Pose<f64>]) -> f64,
    at: &[Pose<f64>],
) -> SMatrix<f64, D, D> {
    let c0 = cost(at);
    let diff = |v: &SMatrix<f64, D, 1>, h: f64| {
        (along(cost, at, v, h) - 2.0 * c0 + along(cost, at, v, -h)) / (h * h)
    };
    // one Richardson step cancels the h² truncation term
    let second = |v: &SMatrix<f64, D, 1>| (4.0 * diff(v, 5e-4) - diff(v, 1e-3)) / 3.0;
    let unit = |a: usize| SMatrix::<f64, D, 1>::from_fn(|k, _| if k == a { 1.0 } else { 0.0 });
    SMatrix::from_fn(|a, b| (second(&(unit(a) + unit(b))) - second(&(unit(a) - unit(b)))) / 4.0)
}

pub fn lie_roundtrip(cases: usize) -> SuiteResult {
    let mut rng = CounterRng::new(101, 0);
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let dir = vec3(&mut rng, 1.0).normalize();
        // half the cases log-uniform in angle, where series and closed forms meet
        let angle = if k % 2 == 0 {
            (std::f64::consts::PI - 0.1) * rng.uniform()
        } else {
            10f64.powf(-9.0 * rng.uniform())
        };
        let omega = dir * angle;
        let g = Twist::new(omega, vec3(&mut rng, 5.0));
        let back = log_se3(&exp_se3(&g)).map(|b| (b.to_vector() - g.to_vector()).norm());
        worst = worst.max(back.unwrap_or(f64::INFINITY));
        let eye = exp_se3(&g).to_matrix() * exp_se3(&g.scale(-1.0)).to_matrix();
        worst = worst.max((eye - Matrix4::identity()).amax());
    }
    SuiteResult {
        name: "lie",
        cases,
        max_error: worst,
        tolerance: 1e-9,
    }
}

/// `Gamma bar(v) = F(v) vee(Gamma)` and `Gammaᵀ bar(v) = G(v) vee(Gamma)` on
/// integer inputs, where both sides are exact.
pub fn fg_identities(cases: usize, fault: Fault) -> SuiteResult {
    let mut rng = CounterRng::new(102, 0);
    let int = |r: &mut CounterRng| (r.uniform() * 19.0).floor() - 9.0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let g = Vector6::from_fn(|_, _| int(&mut rng));
        let v = Vector3::from_fn(|_, _| int(&mut rng));
        let w = wedge(&g);
        worst = worst.max((w * bar(&v) - f_checked(&v, fault) * g).amax());
        worst = worst.max((w.transpose() * bar(&v) - g_op(&v) * g).amax());
    }
    SuiteResult {
        name: "f/g",
        cases,
        max_error: worst,
        tolerance: 0.0,
    }
}

pub fn projection(cases: usize) -> SuiteResult {
    let mut rng = CounterRng::new(103, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = Matrix4::from_fn(|_, _| uniform(&mut rng, 2.0));
        let p = proj_se3(&m);
        worst = worst.max((proj_se3(&p.wedge()).to_vector() - p.to_vector()).amax());
        let psi = wedge(&Vector6::from_fn(|_, _| uniform(&mut rng, 2.0)));
        worst = worst.max(((m - p.wedge()).component_mul(&psi)).sum().abs());
    }
    SuiteResult {
        name: "projection",
        cases,
        max_error: worst,
        tolerance: 1e-12,
    }
}

/// Relative error of the landmark and both robot gradients.
pub fn gradients(cases: usize) -> SuiteResult {
    let mut rng = CounterRng::new(104, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (x, m) = landmark_case(&mut rng);
        let g = landmark_terms(&x, &m).expect("valid noise").grad;
        let fd: Vector6<f64> = fd_gradient(&|p| landmark_cost(&p[0], &m), &[x]);
        worst = worst.max((fd - g).norm() / g.norm());

        let (xi, xj, m) = robot_case(&mut rng);
        let t = robot_terms(&xi, &xj, &m).expect("valid noise");
        let fd: SMatrix<f64, 12, 1> = fd_gradient(&|p| robot_cost(&p[0], &p[1], &m), &[xi, xj]);
        let (fi, fj) = (fd.fixed_rows::<6>(0), fd.fixed_rows::<6>(6));
        worst = worst.max((fi - t.grad_observer).norm() / t.grad_observer.norm());
        worst = worst.max((fj - t.grad_observed).norm() / t.grad_observed.norm());
    }
    SuiteResult {
        name: "gradient",
        cases,
        max_error: worst,
        tolerance: 1e-5,
    }
}

/// Absolute error of `Q_ii` and the four `W` blocks.
pub fn hessians(cases: usize) -> SuiteResult {
    let mut rng = CounterRng::new(105, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (x, m) = landmark_case(&mut rng);
        let q = landmark_terms(&x, &m).expect("valid noise").hess;
        let fd: SMatrix<f64, 6, 6> = fd_hessian(&|p| landmark_cost(&p[0], &m), &[x]);
        worst = worst.max((fd - q).amax());

        let (xi, xj, m) = robot_case(&mut rng);
        let t = robot_terms(&xi, &xj, &m).expect("valid noise");
        let fd: SMatrix<f64, 12, 12> = fd_hessian(&|p| robot_cost(&p[0], &p[1], &m), &[xi, xj]);
        worst = worst.max((fd - t.block_matrix()).amax());
        if t.w_ji() != t.w_ij.transpose() {
            worst = f64::INFINITY;
        }
    }
    SuiteResult {
        name: "hessian",
        cases,
        max_error: worst,
        tolerance: 1e-4,
    }
}

/// Low-rank update against `(I + Sigma H)⁻¹ Sigma` by dense inversion,
/// relative Frobenius error; a rank above 6 (landmark) or 12 (robot)
/// counts as a failure.
pub fn woodbury(cases: usize) -> SuiteResult {
    let n = 4;
    let dim = 6 * n;
    let mut rng = CounterRng::new(106, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let a = DMatrix::from_fn(dim, dim, |_, _| uniform(&mut rng, 1.0));
        let sigma = &a * a.transpose() * (0.02 / dim as f64) + DMatrix::identity(dim, dim) * 0.01;
        let poses: Vec<Pose<f64>> = (0..n).map(|_| pose(&mut rng)).collect();
        let i = (rng.uniform() * n as f64) as usize;
        let j = (i + 1 + (rng.uniform() * (n - 1) as f64) as usize) % n;

        let (_, lm) = landmark_case(&mut rng);
        let mut q = DMatrix::zeros(dim, dim);
        q.view_mut((6 * i, 6 * i), (6, 6))
            .copy_from(&landmark_terms(&poses[i], &lm).expect("valid noise").hess);

        let (_, _, rm) = robot_case(&mut rng);
        let t = robot_terms(&poses[i], &poses[j], &rm).expect("valid noise");
        let mut w = DMatrix::zeros(dim, dim);
        for (r, c, b) in [
            (i, i, t.w_ii),
            (i, j, t.w_ij),
            (j, i, t.w_ji()),
            (j, j, t.w_jj),
        ] {
            w.view_mut((6 * r, 6 * c), (6, 6)).copy_from(&b);
        }

        for (h, blocks, max_rank) in [(q, vec![i], 6), (w, vec![i, j], 12)] {
            let dense = (DMatrix::identity(dim, dim) + &sigma * &h)
                .try_inverse()
                .map(|inv| inv * &sigma);
            let err = match (dense, woodbury_update(&sigma, &h, &blocks)) {
                (Some(d), Ok((low, rank))) if rank <= max_rank => (low - &d).norm() / d.norm(),
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    SuiteResult {
        name: "woodbury",
        cases,
        max_error: worst,
        tolerance: 1e-10,
    }
}

pub fn run_all(fault: Fault) -> Vec<SuiteResult> {
    vec![
        lie_roundtrip(200),
        fg_identities(200, fault),
        projection(200),
        gradients(100),
        hessians(100),
        woodbury(100),
    ]
}
