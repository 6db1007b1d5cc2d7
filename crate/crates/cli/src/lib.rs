//! Front end for the simulator: single runs with CSV/SVG output, multi-seed
//! comparisons of the central and decoupled filters, and self-tests.

pub mod output;
pub mod selftest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use game_sim::schedule::{first_below, long_run_average};
use game_sim::{
    simulate, CentralBackend, ConfigError, FilterChoice, RunLog, RunOptions, Scenario, SimError,
};
use rayon::prelude::*;
use thiserror::Error;

/// Environment variable that overrides `--out`.
pub const OUT_ENV: &str = "GAME_COLOCATE_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numerical(SimError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace: {0}")]
    Trace(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("max discrepancy {found:.3e} exceeds tolerance {tol:.3e}")]
    Tolerance { found: f64, tol: f64 },
    #[error("{0}")]
    Usage(String),
    #[error("{0} self-test suite(s) failed")]
    SelfTest(usize),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures of a filter.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            _ => 1,
        }
    }
}

/// Scenario from a file, or one of the shipped ones by name.
pub fn load_scenario(spec: &str) -> Result<Scenario, CliError> {
    let path = Path::new(spec);
    if !path.exists() {
        match spec {
            "planar4" => return Ok(Scenario::planar4()),
            "spatial4" => return Ok(Scenario::spatial4()),
            _ => {}
        }
    }
    Ok(Scenario::load(path)?)
}

/// `--out`, unless the environment overrides it.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => flag.map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    }
}

/// Seed lists such as `1,2,5` or `1..10` (inclusive), or a mix.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("invalid seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) =
                    (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub filters: Vec<String>,
    pub initial_error: f64,
    pub final_error: f64,
    pub long_run_error: f64,
    pub long_run_rotation: f64,
    pub below_0_2_at: Option<f64>,
    /// Largest translation and rotation gap between the two filters.
    pub discrepancy: Option<(f64, f64)>,
    pub wall_seconds: f64,
}

impl std::fmt::Display for RunReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario        {}", self.scenario)?;
        writeln!(f, "seed            {}", self.seed)?;
        writeln!(f, "filters         {}", self.filters.join(", "))?;
        writeln!(f, "initial error   {:.4} m", self.initial_error)?;
        writeln!(f, "final error     {:.4} m", self.final_error)?;
        writeln!(
            f,
            "long-run error  {:.4} m, {:.4} rad",
            self.long_run_error, self.long_run_rotation
        )?;
        match self.below_0_2_at {
            Some(t) => writeln!(f, "below 0.2 m at  {t:.1} s")?,
            None => writeln!(f, "below 0.2 m at  never")?,
        }
        if let Some((dt, dr)) = self.discrepancy {
            writeln!(f, "max discrepancy {dt:.3e} m, {dr:.3e} rad")?;
        }
        write!(f, "wall time       {:.2} s", self.wall_seconds)
    }
}

/// Runs the scenario; the reported errors are those of the first filter.
pub fn run(
    s: &Scenario,
    choice: FilterChoice,
    backend: CentralBackend,
) -> Result<(RunReport, RunLog), CliError> {
    let start = Instant::now();
    let log = simulate(s, choice, backend, RunOptions::default())?;
    let rows = &log.metrics[0];
    let tail = &rows[rows.len() / 2..];
    let report = RunReport {
        scenario: s.name.clone(),
        seed: s.seed,
        filters: log.drivers.clone(),
        initial_error: rows[0].avg_terr,
        final_error: rows[rows.len() - 1].avg_terr,
        long_run_error: long_run_average(rows),
        long_run_rotation: tail.iter().map(|r| r.avg_rerr).sum::<f64>() / tail.len() as f64,
        below_0_2_at: first_below(rows, 0.2),
        discrepancy: log.discrepancy.get(1).map(|d| (d.translation, d.rotation)),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, log))
}

/// Writes `errors[suffix].csv` and/or the matching SVG into `dir`.
pub fn write_outputs(
    log: &RunLog,
    dir: &Path,
    csv: bool,
    plot: bool,
    title: &str,
) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (k, (name, rows)) in log.drivers.iter().zip(&log.metrics).enumerate() {
        let stem = if k == 0 {
            "errors".to_string()
        } else {
            format!("errors_{name}")
        };
        let text = output::to_csv(rows);
        if csv {
            let path = dir.join(format!("{stem}.csv"));
            std::fs::write(&path, &text).map_err(io(&path))?;
            written.push(path);
        }
        if plot {
            let path = dir.join(format!("{stem}.svg"));
            output::plot_svg(&text, &format!("{title} ({name})"), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub long_run_error: f64,
    pub below_0_2_at: Option<f64>,
    pub discrepancy: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub scenario: String,
    pub seeds: Vec<SeedResult>,
    pub mean_long_run: f64,
    pub std_long_run: f64,
    pub max_discrepancy: (f64, f64),
}

impl std::fmt::Display for CompareSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario {}", self.scenario)?;
        writeln!(
            f,
            "{:>6}  {:>12}  {:>10}  {:>12}  {:>12}",
            "seed", "long-run [m]", "<0.2 m [s]", "gap [m]", "gap [rad]"
        )?;
        for r in &self.seeds {
            let below = r
                .below_0_2_at
                .map_or("never".to_string(), |t| format!("{t:.1}"));
            writeln!(
                f,
                "{:>6}  {:>12.4}  {:>10}  {:>12.3e}  {:>12.3e}",
                r.seed, r.long_run_error, below, r.discrepancy.0, r.discrepancy.1
            )?;
        }
        writeln!(
            f,
            "long-run mean {:.4} m, std {:.4} m",
            self.mean_long_run, self.std_long_run
        )?;
        write!(
            f,
            "max discrepancy {:.3e} m, {:.3e} rad",
            self.max_discrepancy.0, self.max_discrepancy.1
        )
    }
}

/// Both filters on every seed, in parallel; results are in seed-list order.
pub fn compare(
    s: &Scenario,
    seeds: &[u64],
    backend: CentralBackend,
) -> Result<CompareSummary, CliError> {
    let results: Vec<SeedResult> = seeds
        .par_iter()
        .map(|&seed| {
            let mut s = s.clone();
            s.seed = seed;
            let log = simulate(&s, FilterChoice::Both, backend, RunOptions::default())?;
            let rows = &log.metrics[0];
            Ok(SeedResult {
                seed,
                long_run_error: long_run_average(rows),
                below_0_2_at: first_below(rows, 0.2),
                discrepancy: (log.discrepancy[1].translation, log.discrepancy[1].rotation),
            })
        })
        .collect::<Result<_, CliError>>()?;
    let k = results.len() as f64;
    let mean = results.iter().map(|r| r.long_run_error).sum::<f64>() / k;
    let var = if results.len() > 1 {
        results
            .iter()
            .map(|r| (r.long_run_error - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0)
    } else {
        0.0
    };
    let max_discrepancy = results.iter().fold((0.0, 0.0), |(t, r), x| {
        (f64::max(t, x.discrepancy.0), f64::max(r, x.discrepancy.1))
    });
    Ok(CompareSummary {
        scenario: s.name.clone(),
        seeds: results,
        mean_long_run: mean,
        std_long_run: var.sqrt(),
        max_discrepancy,
    })
}

/// Fails if either the translation or the rotation gap exceeds `tol`.
pub fn check_tolerance(summary: &CompareSummary, tol: f64) -> Result<(), CliError> {
    let found = summary.max_discrepancy.0.max(summary.max_discrepancy.1);
    if found > tol {
        return Err(CliError::Tolerance { found, tol });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..3,7").unwrap(), vec![1, 2, 3, 7]);
        assert_eq!(parse_seeds("5").unwrap(), vec![5]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn exit_codes() {
        let config = CliError::Config(ConfigError::MissingHeader);
        assert_eq!(config.exit_code(), 2);
        assert_eq!(
            CliError::Tolerance {
                found: 1.0,
                tol: 0.0
            }
            .exit_code(),
            1
        );
    }

    #[test]
    fn builtin_names_resolve() {
        assert_eq!(load_scenario("planar4").unwrap(), Scenario::planar4());
        assert!(matches!(
            load_scenario("/nonexistent.scn"),
            Err(CliError::Config(_))
        ));
    }
}
