//! Deterministic event loop driving any number of filters on one
//! measurement stream.

use game_core::central::{symmetry_defect, CentralFilter, GlobalEstimate, InverseHessian};
use game_core::decoupled::DecoupledNetwork;
use game_core::error::FilterError;
use game_core::lie::Pose;
use game_core::measurement::{LandmarkMeasurement, RobotMeasurement, VelocityMeasurement};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::rng::CounterRng;
use crate::scenario::{ConfigError, Scenario};
use crate::world::{
    initial_estimate, initial_sigma, initial_truth, pose_errors, sample_landmarks, sample_robots,
    sample_velocity, step_truth, STREAM_SENSORS,
};

/// A filter the scheduler can feed.
pub trait FilterDriver {
    fn name(&self) -> &str;
    fn propagate(&mut self, u: &[VelocityMeasurement<f64>], dt: f64) -> Result<(), FilterError>;
    fn landmark_update(&mut self, m: &LandmarkMeasurement<f64>) -> Result<(), FilterError>;
    fn robot_update(&mut self, m: &RobotMeasurement<f64>) -> Result<(), FilterError>;
    fn poses(&self) -> Vec<Pose<f64>>;
    /// Full `6n x 6n` matrix whose health is monitored (`P` or `Sigma`).
    fn information(&self) -> Result<DMatrix<f64>, FilterError>;
}

pub struct CentralDriver(pub CentralFilter<f64>);

impl CentralDriver {
    /// Inverse-form backend, the one the decoupled network reproduces.
    pub fn inverse(est: GlobalEstimate<f64>, sigma: InverseHessian<f64>) -> Self {
        Self(CentralFilter::with_inverse(est, sigma))
    }

    pub fn hessian(
        est: GlobalEstimate<f64>,
        sigma: InverseHessian<f64>,
    ) -> Result<Self, FilterError> {
        Ok(Self(CentralFilter::with_hessian(est, sigma.to_hessian()?)))
    }
}

impl FilterDriver for CentralDriver {
    fn name(&self) -> &str {
        "central"
    }
    fn propagate(&mut self, u: &[VelocityMeasurement<f64>], dt: f64) -> Result<(), FilterError> {
        self.0.propagate(u, dt)
    }
    fn landmark_update(&mut self, m: &LandmarkMeasurement<f64>) -> Result<(), FilterError> {
        self.0.landmark_update(m)
    }
    fn robot_update(&mut self, m: &RobotMeasurement<f64>) -> Result<(), FilterError> {
        self.0.robot_update(m)
    }
    fn poses(&self) -> Vec<Pose<f64>> {
        self.0.poses().to_vec()
    }
    fn information(&self) -> Result<DMatrix<f64>, FilterError> {
        Ok(self.0.matrix().clone())
    }
}

pub struct DecoupledDriver(pub DecoupledNetwork<f64>);

impl DecoupledDriver {
    pub fn new(
        est: &GlobalEstimate<f64>,
        sigma: &InverseHessian<f64>,
    ) -> Result<Self, FilterError> {
        Ok(Self(DecoupledNetwork::new(est, sigma)?))
    }
}

impl FilterDriver for DecoupledDriver {
    fn name(&self) -> &str {
        "decoupled"
    }
    fn propagate(&mut self, u: &[VelocityMeasurement<f64>], dt: f64) -> Result<(), FilterError> {
        self.0.propagate(u, dt)
    }
    fn landmark_update(&mut self, m: &LandmarkMeasurement<f64>) -> Result<(), FilterError> {
        self.0.landmark_update(m)
    }
    fn robot_update(&mut self, m: &RobotMeasurement<f64>) -> Result<(), FilterError> {
        self.0.robot_update(m)
    }
    fn poses(&self) -> Vec<Pose<f64>> {
        self.0.poses()
    }
    fn information(&self) -> Result<DMatrix<f64>, FilterError> {
        self.0.sigma()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{driver} filter failed at tick {tick} (t = {t:.2} s): {source}")]
    Filter {
        driver: String,
        tick: u64,
        t: f64,
        robot: Option<usize>,
        source: FilterError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Velocity,
    Landmark,
    Robot,
}

/// One scheduled sensor event. `digest` folds the bits of every measurement
/// value delivered, so identical logs mean identical streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub tick: u64,
    pub kind: EventKind,
    pub count: usize,
    pub digest: u64,
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            EventKind::Velocity => "velocity",
            EventKind::Landmark => "landmark",
            EventKind::Robot => "robot",
        };
        write!(
            f,
            "{} {kind} {} {:016x}",
            self.tick, self.count, self.digest
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    pub avg_terr: f64,
    pub avg_rerr: f64,
    pub terr: Vec<f64>,
    pub rerr: Vec<f64>,
}

impl MetricsRow {
    pub fn new(t: f64, truth: &[Pose<f64>], est: &[Pose<f64>]) -> Self {
        let (terr, rerr) = pose_errors(truth, est);
        let n = terr.len() as f64;
        Self {
            t,
            avg_terr: terr.iter().sum::<f64>() / n,
            avg_rerr: rerr.iter().sum::<f64>() / n,
            terr,
            rerr,
        }
    }
}

/// Health of the monitored matrix over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Health {
    pub checks: usize,
    pub cholesky_failures: usize,
    pub max_symmetry_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Discrepancy {
    pub translation: f64,
    pub rotation: f64,
}

impl Discrepancy {
    fn update(&mut self, a: &[Pose<f64>], b: &[Pose<f64>]) {
        let (t, r) = pose_errors(a, b);
        self.translation = t.into_iter().fold(self.translation, f64::max);
        self.rotation = r.into_iter().fold(self.rotation, f64::max);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Cholesky and symmetry check of every driver's matrix after each tick.
    pub check_health: bool,
    /// Keep the per-event log (otherwise only counters).
    pub record_events: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub drivers: Vec<String>,
    pub events: Vec<Event>,
    pub velocity_events: usize,
    pub landmark_ticks: usize,
    pub robot_ticks: usize,
    /// `metrics[d]` holds the rows of driver `d`.
    pub metrics: Vec<Vec<MetricsRow>>,
    pub health: Vec<Health>,
    /// Largest pose gap of each driver to driver 0, over every tick.
    pub discrepancy: Vec<Discrepancy>,
}

fn fold_digest(mut h: u64, xs: impl IntoIterator<Item = f64>) -> u64 {
    for x in xs {
        h = crate::rng::mix(h ^ x.to_bits());
    }
    h
}

fn filter_error(driver: &dyn FilterDriver, tick: u64, t: f64, source: FilterError) -> SimError {
    let robot = match &source {
        FilterError::NonPositiveDefinite { robot, .. } => *robot,
        _ => None,
    };
    SimError::Filter {
        driver: driver.name().to_string(),
        tick,
        t,
        robot,
        source,
    }
}

fn check_health(driver: &dyn FilterDriver, health: &mut Health) -> Result<(), FilterError> {
    let m = driver.information()?;
    health.checks += 1;
    health.max_symmetry_defect = health.max_symmetry_defect.max(symmetry_defect(&m));
    if m.cholesky().is_none() {
        health.cholesky_failures += 1;
    }
    Ok(())
}

/// Runs the scenario. Per velocity tick `k`: truth and every filter advance
/// by `dt`; then, at `t_{k+1}`, landmark measurements (if due) and robot
/// measurements (if due) are applied one at a time in index order; metrics
/// are recorded at `t = 0` and every metrics period.
pub fn run_schedule(
    s: &Scenario,
    drivers: &mut [&mut dyn FilterDriver],
    opts: RunOptions,
) -> Result<RunLog, SimError> {
    s.validate()?;
    let (mut truth, mut motion) = initial_truth(s);
    let mut sensors = CounterRng::new(s.seed, STREAM_SENSORS);
    let dt = s.dt();
    let (lp, rp, mp) = (s.landmark_period(), s.robot_period(), s.metrics_period());

    let mut log = RunLog {
        drivers: drivers.iter().map(|d| d.name().to_string()).collect(),
        events: Vec::new(),
        velocity_events: 0,
        landmark_ticks: 0,
        robot_ticks: 0,
        metrics: drivers
            .iter()
            .map(|d| vec![MetricsRow::new(0.0, &truth.poses, &d.poses())])
            .collect(),
        health: vec![Health::default(); drivers.len()],
        discrepancy: vec![Discrepancy::default(); drivers.len()],
    };
    let record = |log: &mut RunLog, e: Event| {
        if opts.record_events {
            log.events.push(e);
        }
    };

    for k in 0..s.steps() {
        let tick = k + 1;
        let t = tick as f64 * dt;
        let u = sample_velocity(&truth, s, &mut sensors);
        truth = step_truth(&truth, s, &mut motion, dt);
        truth.t = t;
        for d in drivers.iter_mut() {
            d.propagate(&u, dt)
                .map_err(|e| filter_error(&**d, tick, t, e))?;
        }
        log.velocity_events += 1;
        let digest = fold_digest(
            0,
            u.iter()
                .flat_map(|m| m.u.to_vector().iter().copied().collect::<Vec<_>>()),
        );
        record(
            &mut log,
            Event {
                tick,
                kind: EventKind::Velocity,
                count: u.len(),
                digest,
            },
        );

        if tick % lp == 0 {
            let ms = sample_landmarks(&truth, s, &mut sensors);
            for m in &ms {
                for d in drivers.iter_mut() {
                    d.landmark_update(m)
                        .map_err(|e| filter_error(&**d, tick, t, e))?;
                }
            }
            log.landmark_ticks += 1;
            let digest = fold_digest(0, ms.iter().flat_map(|m| [m.y.x, m.y.y, m.y.z]));
            record(
                &mut log,
                Event {
                    tick,
                    kind: EventKind::Landmark,
                    count: ms.len(),
                    digest,
                },
            );
        }
        if tick % rp == 0 {
            let ms = sample_robots(&truth, s, &mut sensors);
            for m in &ms {
                for d in drivers.iter_mut() {
                    d.robot_update(m)
                        .map_err(|e| filter_error(&**d, tick, t, e))?;
                }
            }
            log.robot_ticks += 1;
            let digest = fold_digest(0, ms.iter().flat_map(|m| [m.z.x, m.z.y, m.z.z]));
            record(
                &mut log,
                Event {
                    tick,
                    kind: EventKind::Robot,
                    count: ms.len(),
                    digest,
                },
            );
        }

        if drivers.len() > 1 {
            let reference = drivers[0].poses();
            for (d, gap) in drivers.iter().zip(log.discrepancy.iter_mut()).skip(1) {
                gap.update(&reference, &d.poses());
            }
        }
        if opts.check_health {
            for (d, h) in drivers.iter().zip(log.health.iter_mut()) {
                check_health(&**d, h).map_err(|e| filter_error(&**d, tick, t, e))?;
            }
        }
        if tick % mp == 0 {
            for (d, rows) in drivers.iter().zip(log.metrics.iter_mut()) {
                rows.push(MetricsRow::new(t, &truth.poses, &d.poses()));
            }
        }
    }
    Ok(log)
}

/// Which filters to build for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterChoice {
    Central,
    Decoupled,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentralBackend {
    Hessian,
    Inverse,
}

/// Builds the requested drivers from the scenario's initial estimate and
/// runs them. With `Both`, the central filter is driver 0.
pub fn simulate(
    s: &Scenario,
    choice: FilterChoice,
    backend: CentralBackend,
    opts: RunOptions,
) -> Result<RunLog, SimError> {
    s.validate()?;
    let (truth, _) = initial_truth(s);
    let est = initial_estimate(&truth, s);
    let sigma = initial_sigma(s);
    let init_err = filter_error_init;
    let mut central = match choice {
        FilterChoice::Central | FilterChoice::Both => Some(match backend {
            CentralBackend::Inverse => CentralDriver::inverse(est.clone(), sigma.clone()),
            CentralBackend::Hessian => {
                CentralDriver::hessian(est.clone(), sigma.clone()).map_err(init_err)?
            }
        }),
        FilterChoice::Decoupled => None,
    };
    let mut decoupled = match choice {
        FilterChoice::Decoupled | FilterChoice::Both => {
            Some(DecoupledDriver::new(&est, &sigma).map_err(init_err)?)
        }
        FilterChoice::Central => None,
    };
    let mut drivers: Vec<&mut dyn FilterDriver> = Vec::new();
    if let Some(c) = central.as_mut() {
        drivers.push(c);
    }
    if let Some(d) = decoupled.as_mut() {
        drivers.push(d);
    }
    run_schedule(s, &mut drivers, opts)
}

fn filter_error_init(source: FilterError) -> SimError {
    SimError::Filter {
        driver: "init".into(),
        tick: 0,
        t: 0.0,
        robot: None,
        source,
    }
}

/// Mean of `avg_terr` over the final half of the rows.
pub fn long_run_average(rows: &[MetricsRow]) -> f64 {
    let tail = &rows[rows.len() / 2..];
    tail.iter().map(|r| r.avg_terr).sum::<f64>() / tail.len() as f64
}

/// Time of the first row whose `avg_terr` is below `threshold`.
pub fn first_below(rows: &[MetricsRow], threshold: f64) -> Option<f64> {
    rows.iter().find(|r| r.avg_terr < threshold).map(|r| r.t)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        name: &'static str,
        poses: Vec<Pose<f64>>,
        calls: Vec<String>,
    }

    impl FilterDriver for Recorder {
        fn name(&self) -> &str {
            self.name
        }
        fn propagate(&mut self, _: &[VelocityMeasurement<f64>], _: f64) -> Result<(), FilterError> {
            self.calls.push("v".into());
            Ok(())
        }
        fn landmark_update(&mut self, m: &LandmarkMeasurement<f64>) -> Result<(), FilterError> {
            self.calls.push(format!("l{}", m.robot));
            Ok(())
        }
        fn robot_update(&mut self, m: &RobotMeasurement<f64>) -> Result<(), FilterError> {
            self.calls.push(format!("r{}{}", m.observer, m.observed));
            Ok(())
        }
        fn poses(&self) -> Vec<Pose<f64>> {
            self.poses.clone()
        }
        fn information(&self) -> Result<DMatrix<f64>, FilterError> {
            Ok(DMatrix::identity(6, 6))
        }
    }

    fn recorder(name: &'static str) -> Recorder {
        Recorder {
            name,
            poses: vec![Pose::identity(); 4],
            calls: Vec::new(),
        }
    }

    #[test]
    fn one_second_event_counts() {
        let mut s = Scenario::planar4();
        s.duration = 1.0;
        let mut r = recorder("r");
        let log = run_schedule(
            &s,
            &mut [&mut r],
            RunOptions {
                record_events: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            (log.velocity_events, log.landmark_ticks, log.robot_ticks),
            (100, 10, 5)
        );
        assert_eq!(log.metrics[0].len(), 11);
        let order: Vec<&str> = r.calls[..19].iter().map(String::as_str).collect();
        assert_eq!(
            order[9..],
            ["v", "l0", "l1", "l2", "l3", "v", "v", "v", "v", "v"]
        );
        let at_robot_tick: Vec<&str> = r
            .calls
            .iter()
            .map(String::as_str)
            .skip_while(|c| !c.starts_with('r'))
            .take(4)
            .collect();
        assert_eq!(at_robot_tick, ["r01", "r12", "r23", "r30"]);
    }

    #[test]
    fn same_seed_same_log() {
        let mut s = Scenario::spatial4();
        s.duration = 2.0;
        let opts = RunOptions {
            record_events: true,
            ..Default::default()
        };
        let a = run_schedule(&s, &mut [&mut recorder("a")], opts).unwrap();
        let b = run_schedule(&s, &mut [&mut recorder("a")], opts).unwrap();
        assert_eq!(a, b);
        s.seed += 1;
        let c = run_schedule(&s, &mut [&mut recorder("a")], opts).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn misaligned_rate_is_a_config_error() {
        let mut s = Scenario::planar4();
        s.robot_hz = 7.0;
        let err = run_schedule(&s, &mut [&mut recorder("a")], RunOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            SimError::Config(ConfigError::MisalignedRate { .. })
        ));
    }

    #[test]
    fn long_run_average_uses_final_half() {
        let rows: Vec<MetricsRow> = (0..4)
            .map(|k| MetricsRow {
                t: k as f64,
                avg_terr: k as f64,
                avg_rerr: 0.0,
                terr: vec![],
                rerr: vec![],
            })
            .collect();
        assert_eq!(long_run_average(&rows), 2.5);
        assert_eq!(first_below(&rows, 1.5), Some(0.0));
    }
}
