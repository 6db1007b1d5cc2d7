//! Sensor statistics, determinism and driver isolation of the scheduler.

use game_core::lie::Twist;
use game_sim::rng::CounterRng;
use game_sim::schedule::{run_schedule, CentralDriver, DecoupledDriver, FilterDriver, RunOptions};
use game_sim::world::{
    initial_estimate, initial_sigma, initial_truth, sample_robots, sample_velocity, step_truth,
};
use game_sim::{Mode, Scenario};
use nalgebra::{Matrix3, Vector3, Vector6};
use proptest::prelude::*;

const DRAWS: usize = 100_000;

fn spatial_short() -> Scenario {
    let mut s = Scenario::spatial4();
    s.duration = 3.0;
    s
}

#[test]
fn velocity_noise_is_zero_mean() {
    let s = Scenario::spatial4();
    let (truth, _) = initial_truth(&s);
    let mut rng = CounterRng::new(11, 0);
    let mut sum = Vector6::zeros();
    for _ in 0..DRAWS {
        let u = &sample_velocity(&truth, &s, &mut rng)[0];
        sum += u.u.to_vector() - truth.twists[0].to_vector();
    }
    let mean = sum / DRAWS as f64;
    let bound = 3.0 * s.b / (DRAWS as f64).sqrt();
    for k in 0..6 {
        assert!(mean[k].abs() < bound, "axis {k}: {} vs {bound}", mean[k]);
    }
}

#[test]
fn planar_velocity_noise_stays_in_plane() {
    let s = Scenario::planar4();
    let (truth, _) = initial_truth(&s);
    let mut rng = CounterRng::new(3, 0);
    for _ in 0..1000 {
        for (m, w) in sample_velocity(&truth, &s, &mut rng)
            .iter()
            .zip(&truth.twists)
        {
            let e = m.u.to_vector() - w.to_vector();
            assert_eq!([e[0], e[1], e[5]], [0.0; 3]);
        }
    }
}

#[test]
fn robot_noise_covariance_is_dd_transpose() {
    let s = Scenario::spatial4();
    let (truth, _) = initial_truth(&s);
    let clean = {
        let mut quiet = s.clone();
        quiet.sensor_noise = false;
        sample_robots(&truth, &quiet, &mut CounterRng::new(0, 0))[0].z
    };
    let mut rng = CounterRng::new(5, 0);
    let mut samples = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        samples.push(sample_robots(&truth, &s, &mut rng)[0].z - clean);
    }
    let mean: Vector3<f64> = samples.iter().sum::<Vector3<f64>>() / DRAWS as f64;
    let cov = samples
        .iter()
        .map(|e| (e - mean) * (e - mean).transpose())
        .sum::<Matrix3<f64>>()
        / (DRAWS - 1) as f64;
    let expected = s.d * s.d;
    for r in 0..3 {
        for c in 0..3 {
            let target = if r == c { expected } else { 0.0 };
            assert!(
                (cov[(r, c)] - target).abs() < 0.05 * expected,
                "cov[{r},{c}] = {}",
                cov[(r, c)]
            );
        }
    }
}

fn run_pair(
    s: &Scenario,
    central_first: bool,
) -> (Vec<game_sim::MetricsRow>, Vec<game_sim::MetricsRow>) {
    let (truth, _) = initial_truth(s);
    let est = initial_estimate(&truth, s);
    let sigma = initial_sigma(s);
    let mut c = CentralDriver::inverse(est.clone(), sigma.clone());
    let mut d = DecoupledDriver::new(&est, &sigma).unwrap();
    let opts = RunOptions::default();
    if central_first {
        let log = run_schedule(s, &mut [&mut c as &mut dyn FilterDriver, &mut d], opts).unwrap();
        (log.metrics[0].clone(), log.metrics[1].clone())
    } else {
        let log = run_schedule(s, &mut [&mut d as &mut dyn FilterDriver, &mut c], opts).unwrap();
        (log.metrics[1].clone(), log.metrics[0].clone())
    }
}

#[test]
fn driver_order_does_not_change_outputs() {
    let s = spatial_short();
    assert_eq!(run_pair(&s, true), run_pair(&s, false));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn planar_truth_stays_planar(seed in any::<u64>(), steps in 1usize..2000) {
        let mut s = Scenario::planar4();
        s.seed = seed;
        let (mut truth, mut rng) = initial_truth(&s);
        for _ in 0..steps {
            truth = step_truth(&truth, &s, &mut rng, s.dt());
        }
        for x in &truth.poses {
            let r = x.rotation.matrix();
            prop_assert_eq!(x.translation.z, 0.0);
            prop_assert_eq!([r[(2, 0)], r[(2, 1)], r[(0, 2)], r[(1, 2)]], [0.0; 4]);
            prop_assert_eq!(r[(2, 2)], 1.0);
        }
    }

    #[test]
    fn spatial_truth_stays_near_the_cube(seed in any::<u64>()) {
        let mut s = Scenario::spatial4();
        s.seed = seed;
        let (mut truth, mut rng) = initial_truth(&s);
        for _ in 0..3000 {
            truth = step_truth(&truth, &s, &mut rng, s.dt());
        }
        // reflection lets a robot overshoot the face by at most one step
        let slack = s.max_speed * s.dt();
        for x in &truth.poses {
            prop_assert!(x.translation.amax() <= s.half_extent + slack);
        }
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>()) {
        let mut s = spatial_short();
        s.seed = seed;
        s.duration = 0.5;
        let (truth, _) = initial_truth(&s);
        let sample = |mut rng: CounterRng| -> Vec<Twist<f64>> {
            (0..20).flat_map(|_| sample_velocity(&truth, &s, &mut rng)).map(|m| m.u).collect()
        };
        prop_assert_eq!(sample(CounterRng::new(seed, 0)), sample(CounterRng::new(seed, 0)));
        let opts = RunOptions { check_health: false, record_events: true };
        let run = || {
            let est = initial_estimate(&truth, &s);
            let mut c = CentralDriver::inverse(est, initial_sigma(&s));
            run_schedule(&s, &mut [&mut c as &mut dyn FilterDriver], opts).unwrap()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn scenario_text_roundtrip(
        seed in any::<u64>(),
        radius in 0.5f64..20.0,
        b in 0.0f64..1.0,
        planar in any::<bool>(),
    ) {
        let mut s = if planar { Scenario::planar4() } else { Scenario::spatial4() };
        s.seed = seed;
        s.b = b;
        if s.mode == Mode::Planar {
            s.radius = radius;
        }
        prop_assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }
}
