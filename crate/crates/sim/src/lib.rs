//! Deterministic simulation harness for cooperative localisation: scenario
//! files, ground truth, seeded sensors and a scheduler that feeds several
//! filters the same measurement stream.

pub mod rng;
pub mod scenario;
pub mod schedule;
pub mod world;

pub use scenario::{ConfigError, Mode, Scenario};
pub use schedule::{
    run_schedule, simulate, CentralBackend, FilterChoice, FilterDriver, MetricsRow, RunLog,
    RunOptions, SimError,
};
