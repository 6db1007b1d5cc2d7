//! Ground truth, sensor sampling and the initial estimate.

use game_core::central::{GlobalEstimate, InverseHessian};
use game_core::lie::{exp_se3, Pose, Rotation, Twist};
use game_core::measurement::{LandmarkMeasurement, RobotMeasurement, VelocityMeasurement};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

use crate::rng::CounterRng;
use crate::scenario::{Mode, Scenario};

/// Independent random streams so that, e.g., switching sensor noise off
/// does not change the trajectories.
pub const STREAM_SENSORS: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_MOTION: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TruthState {
    pub poses: Vec<Pose<f64>>,
    pub twists: Vec<Twist<f64>>,
    pub t: f64,
}

fn unit_vector(rng: &mut CounterRng, mode: Mode) -> Vector3<f64> {
    loop {
        let [x, y, z] = rng.normals::<3>();
        let v = match mode {
            Mode::Planar => Vector3::new(x, y, 0.0),
            Mode::Spatial => Vector3::new(x, y, z),
        };
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

fn clip(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Starting truth and the motion stream positioned after the draws it used.
pub fn initial_truth(s: &Scenario) -> (TruthState, CounterRng) {
    let mut rng = CounterRng::new(s.seed, STREAM_MOTION);
    let (poses, twists) = match s.mode {
        Mode::Planar => (0..s.n)
            .map(|k| {
                let phi = s.phases[k];
                let p = s.centres[k] + Vector3::new(phi.cos(), phi.sin(), 0.0) * s.radius;
                let heading =
                    Rotation::exp(&Vector3::new(0.0, 0.0, phi + std::f64::consts::FRAC_PI_2));
                let twist = Twist::new(
                    Vector3::new(0.0, 0.0, s.speed / s.radius),
                    Vector3::new(s.speed, 0.0, 0.0),
                );
                (Pose::new(heading, p), twist)
            })
            .unzip(),
        Mode::Spatial => (0..s.n)
            .map(|_| {
                let p = Vector3::from_fn(|_, _| (2.0 * rng.uniform() - 1.0) * 0.5 * s.half_extent);
                let axis = unit_vector(&mut rng, Mode::Spatial);
                let angle = std::f64::consts::PI * (2.0 * rng.uniform() - 1.0) * 0.9;
                let twist = Twist::new(Vector3::zeros(), Vector3::new(s.mean_speed, 0.0, 0.0));
                (Pose::new(Rotation::exp(&(axis * angle)), p), twist)
            })
            .unzip(),
    };
    (
        TruthState {
            poses,
            twists,
            t: 0.0,
        },
        rng,
    )
}

/// Advances every robot by `X <- X exp(dt Omega)` and then evolves the
/// twists (constant on circles, a reflected Ornstein–Uhlenbeck walk in 3-D).
pub fn step_truth(truth: &TruthState, s: &Scenario, rng: &mut CounterRng, dt: f64) -> TruthState {
    let poses: Vec<Pose<f64>> = truth
        .poses
        .iter()
        .zip(&truth.twists)
        .map(|(x, w)| *x * exp_se3(&w.scale(dt)))
        .collect();
    let twists = match s.mode {
        Mode::Planar => truth.twists.clone(),
        Mode::Spatial => poses
            .iter()
            .zip(&truth.twists)
            .map(|(x, w)| {
                let sq = dt.sqrt();
                let xi_w = Vector3::from(rng.normals::<3>());
                let xi_v = Vector3::from(rng.normals::<3>());
                let mean_v = Vector3::new(s.mean_speed, 0.0, 0.0);
                let omega = w.omega - w.omega * (s.ou_theta * dt) + xi_w * (s.ou_sigma_omega * sq);
                let v = w.v + (mean_v - w.v) * (s.ou_theta * dt) + xi_v * (s.ou_sigma_v * sq);
                let r = x.rotation.matrix();
                let mut v_world = r * clip(v, s.max_speed);
                for a in 0..3 {
                    let p = x.translation[a];
                    if p.abs() >= s.half_extent && p * v_world[a] > 0.0 {
                        v_world[a] = -v_world[a];
                    }
                }
                Twist::new(clip(omega, s.max_omega), r.transpose() * v_world)
            })
            .collect(),
    };
    TruthState {
        poses,
        twists,
        t: truth.t + dt,
    }
}

fn planar_mask6(s: &Scenario) -> [f64; 6] {
    match s.mode {
        Mode::Planar => [0.0, 0.0, 1.0, 1.0, 1.0, 0.0],
        Mode::Spatial => [1.0; 6],
    }
}

fn planar_mask3(s: &Scenario) -> Vector3<f64> {
    match s.mode {
        Mode::Planar => Vector3::new(1.0, 1.0, 0.0),
        Mode::Spatial => Vector3::new(1.0, 1.0, 1.0),
    }
}

fn gain(s: &Scenario, g: f64) -> f64 {
    if s.sensor_noise {
        g
    } else {
        0.0
    }
}

/// `u_i = Omega_i + B eps_i`; in planar mode only yaw rate and in-plane
/// velocity are perturbed. Draws are taken even when noise is off.
pub fn sample_velocity(
    truth: &TruthState,
    s: &Scenario,
    rng: &mut CounterRng,
) -> Vec<VelocityMeasurement<f64>> {
    let mask = planar_mask6(s);
    truth
        .twists
        .iter()
        .enumerate()
        .map(|(robot, w)| {
            let eps = rng.normals::<6>();
            let noise: [f64; 6] = std::array::from_fn(|k| eps[k] * mask[k] * gain(s, s.b));
            let u = Twist::from_vector(&(w.to_vector() + nalgebra::Vector6::from(noise)));
            VelocityMeasurement {
                robot,
                u,
                b: Matrix6::identity() * s.b,
            }
        })
        .collect()
}

pub fn sample_landmarks(
    truth: &TruthState,
    s: &Scenario,
    rng: &mut CounterRng,
) -> Vec<LandmarkMeasurement<f64>> {
    let mask = planar_mask3(s);
    s.landmark_pairs()
        .into_iter()
        .map(|(robot, l)| {
            let delta = Vector3::from(rng.normals::<3>()).component_mul(&mask);
            let landmark = s.landmarks[l];
            LandmarkMeasurement {
                robot,
                y: truth.poses[robot].inverse().transform_point(&landmark) + delta * gain(s, s.c),
                landmark,
                c: Matrix3::identity() * s.c,
            }
        })
        .collect()
}

pub fn sample_robots(
    truth: &TruthState,
    s: &Scenario,
    rng: &mut CounterRng,
) -> Vec<RobotMeasurement<f64>> {
    let mask = planar_mask3(s);
    s.robot_pairs()
        .into_iter()
        .map(|(observer, observed)| {
            let eta = Vector3::from(rng.normals::<3>()).component_mul(&mask);
            let marker = s.marker(observed);
            let seen = truth.poses[observed].transform_point(&marker);
            RobotMeasurement {
                observer,
                observed,
                z: truth.poses[observer].inverse().transform_point(&seen) + eta * gain(s, s.d),
                marker,
                d: Matrix3::identity() * s.d,
            }
        })
        .collect()
}

/// Truth displaced by exactly `init_translation_error` in a random direction
/// and rotated by `init_rotation_error` about a random axis (yaw in planar
/// mode).
pub fn initial_estimate(truth: &TruthState, s: &Scenario) -> GlobalEstimate<f64> {
    let mut rng = CounterRng::new(s.seed, STREAM_INIT);
    let poses = truth
        .poses
        .iter()
        .map(|x| {
            let dir = unit_vector(&mut rng, s.mode);
            let axis = match s.mode {
                Mode::Planar => Vector3::z(),
                Mode::Spatial => unit_vector(&mut rng, Mode::Spatial),
            };
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let rot = *x.rotation.matrix()
                * Rotation::exp(&(axis * (sign * s.init_rotation_error))).matrix();
            Pose::new(
                Rotation::try_new(rot).expect("product of rotations"),
                x.translation + dir * s.init_translation_error,
            )
        })
        .collect();
    GlobalEstimate::new(poses, truth.t)
}

pub fn initial_sigma(s: &Scenario) -> InverseHessian<f64> {
    let diag = DVector::from_fn(6 * s.n, |k, _| {
        if k % 6 < 3 {
            s.sigma0_rotation
        } else {
            s.sigma0_translation
        }
    });
    InverseHessian::new(DMatrix::from_diagonal(&diag)).expect("positive sigma0")
}

/// Euclidean translation error and geodesic rotation error per robot.
pub fn pose_errors(truth: &[Pose<f64>], est: &[Pose<f64>]) -> (Vec<f64>, Vec<f64>) {
    truth
        .iter()
        .zip(est)
        .map(|(x, e)| {
            let terr = (e.translation - x.translation).norm();
            let rel = e.rotation.matrix().transpose() * x.rotation.matrix();
            // atan2 keeps full precision near zero, where acos of the trace does not
            let sin = Vector3::new(
                rel[(2, 1)] - rel[(1, 2)],
                rel[(0, 2)] - rel[(2, 0)],
                rel[(1, 0)] - rel[(0, 1)],
            )
            .norm()
                * 0.5;
            (terr, sin.atan2((rel.trace() - 1.0) * 0.5))
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_returns_to_start() {
        let s = Scenario::planar4();
        let (start, mut rng) = initial_truth(&s);
        let mut truth = start.clone();
        let period = std::f64::consts::TAU * s.radius / s.speed;
        let steps = (period * s.velocity_hz).round() as usize;
        let dt = period / steps as f64;
        for _ in 0..steps {
            truth = step_truth(&truth, &s, &mut rng, dt);
        }
        for (a, b) in truth.poses.iter().zip(&start.poses) {
            assert!((a.translation - b.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn planar_truth_stays_planar() {
        let s = Scenario::planar4();
        let (mut truth, mut rng) = initial_truth(&s);
        for _ in 0..1000 {
            truth = step_truth(&truth, &s, &mut rng, s.dt());
            for x in &truth.poses {
                let r = x.rotation.matrix();
                assert_eq!(x.translation.z, 0.0);
                assert_eq!(
                    (r[(0, 2)], r[(1, 2)], r[(2, 0)], r[(2, 1)]),
                    (0.0, 0.0, 0.0, 0.0)
                );
            }
        }
    }

    #[test]
    fn spatial_truth_stays_near_volume() {
        let s = Scenario::spatial4();
        let (mut truth, mut rng) = initial_truth(&s);
        for _ in 0..(120.0 * s.velocity_hz) as usize {
            truth = step_truth(&truth, &s, &mut rng, s.dt());
            for x in &truth.poses {
                assert!(x.translation.amax() < s.half_extent + s.max_speed * 0.05);
            }
        }
    }

    #[test]
    fn zero_twist_keeps_pose() {
        let mut s = Scenario::planar4();
        s.speed = 0.0;
        let (truth, mut rng) = initial_truth(&s);
        let next = step_truth(&truth, &s, &mut rng, 0.01);
        assert_eq!(next.poses, truth.poses);
    }

    #[test]
    fn exact_sensors_see_truth() {
        let mut s = Scenario::planar4();
        s.sensor_noise = false;
        let (truth, _) = initial_truth(&s);
        let mut rng = CounterRng::new(0, STREAM_SENSORS);
        for m in sample_velocity(&truth, &s, &mut rng) {
            assert_eq!(m.u, truth.twists[m.robot]);
        }
        for m in sample_landmarks(&truth, &s, &mut rng) {
            let back = truth.poses[m.robot].transform_point(&m.y);
            assert!((back - m.landmark).norm() < 1e-12);
        }
        let robots = sample_robots(&truth, &s, &mut rng);
        assert_eq!(
            robots
                .iter()
                .map(|m| (m.observer, m.observed))
                .collect::<Vec<_>>(),
            vec![(0, 1), (1, 2), (2, 3), (3, 0)]
        );
    }

    #[test]
    fn identity_frames_measure_raw_points() {
        let mut s = Scenario::planar4();
        s.sensor_noise = false;
        let truth = TruthState {
            poses: vec![Pose::identity(); 4],
            twists: vec![Twist::zero(); 4],
            t: 0.0,
        };
        let mut rng = CounterRng::new(0, 0);
        for m in sample_landmarks(&truth, &s, &mut rng) {
            assert_eq!(m.y, m.landmark);
        }
        for m in sample_robots(&truth, &s, &mut rng) {
            assert_eq!(m.z, m.marker);
        }
    }

    #[test]
    fn initial_error_is_exact() {
        for s in [Scenario::planar4(), Scenario::spatial4()] {
            let (truth, _) = initial_truth(&s);
            let est = initial_estimate(&truth, &s);
            let (terr, rerr) = pose_errors(&truth.poses, &est.poses);
            for (t, r) in terr.iter().zip(&rerr) {
                assert!((t - 1.8).abs() < 1e-12);
                assert!((r - 0.1).abs() < 1e-9);
            }
        }
    }
}
