//! Scenario description and its key/value text format.
//!
//! ```text
//! game-colocate-scenario 1
//! # comment
//! name = planar4
//! mode = planar            # planar | spatial
//! n = 4
//! landmarks = 5 5 1; -5 5 1
//! landmark_edges = 0:0; 1:1    # robot:landmark, or `all`
//! robot_edges = 0>1; 1>0       # observer>observed, or `all`
//! ```
//!
//! Vectors are whitespace-separated, list items `;`-separated. Robots and
//! landmarks are indexed from zero. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

pub const HEADER: &str = "game-colocate-scenario";
pub const FORMAT_VERSION: u32 = 1;

pub const PLANAR4: &str = include_str!("../scenarios/planar4.scn");
pub const SPATIAL4: &str = include_str!("../scenarios/spatial4.scn");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing header line `{HEADER} {FORMAT_VERSION}`")]
    MissingHeader,
    #[error("unsupported scenario format version {0}")]
    Version(u32),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("rate {name} = {hz} Hz does not divide the velocity rate {base} Hz")]
    MisalignedRate {
        name: &'static str,
        hz: f64,
        base: f64,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Circular trajectories in the `z = 0` plane; noise restricted to the plane.
    Planar,
    /// Bounded random-velocity walks in a cube.
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edges {
    All,
    List(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub n: usize,
    pub seed: u64,
    pub duration: f64,
    pub velocity_hz: f64,
    pub landmark_hz: f64,
    pub robot_hz: f64,
    pub metrics_hz: f64,
    pub landmarks: Vec<Vector3<f64>>,
    pub landmark_edges: Edges,
    pub robot_edges: Edges,
    /// Marker point of each robot in its body frame (one entry applies to all).
    pub markers: Vec<Vector3<f64>>,
    /// Isotropic noise gains: `B = b I6`, `C = c I3`, `D = d I3`.
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// When false, measurements are exact but the filters keep `b, c, d`.
    pub sensor_noise: bool,
    /// Initial inverse Hessian, block-diagonal with `sigma0_rotation I3`
    /// on the angular and `sigma0_translation I3` on the linear axes.
    pub sigma0_rotation: f64,
    pub sigma0_translation: f64,
    /// Every robot's initial estimate is displaced by exactly this distance.
    pub init_translation_error: f64,
    pub init_rotation_error: f64,
    pub radius: f64,
    pub speed: f64,
    pub centres: Vec<Vector3<f64>>,
    pub phases: Vec<f64>,
    pub half_extent: f64,
    pub ou_theta: f64,
    pub ou_sigma_omega: f64,
    pub ou_sigma_v: f64,
    pub mean_speed: f64,
    pub max_omega: f64,
    pub max_speed: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            mode: Mode::Planar,
            n: 1,
            seed: 0,
            duration: 60.0,
            velocity_hz: 100.0,
            landmark_hz: 10.0,
            robot_hz: 5.0,
            metrics_hz: 10.0,
            landmarks: Vec::new(),
            landmark_edges: Edges::List(Vec::new()),
            robot_edges: Edges::List(Vec::new()),
            markers: vec![Vector3::zeros()],
            b: 0.05,
            c: 0.5,
            d: 0.5,
            sensor_noise: true,
            sigma0_rotation: 1.0,
            sigma0_translation: 1.0,
            init_translation_error: 1.8,
            init_rotation_error: 0.1,
            radius: 5.0,
            speed: 0.5,
            centres: Vec::new(),
            phases: Vec::new(),
            half_extent: 10.0,
            ou_theta: 0.5,
            ou_sigma_omega: 0.2,
            ou_sigma_v: 0.3,
            mean_speed: 0.5,
            max_omega: 0.6,
            max_speed: 1.5,
        }
    }
}

fn parse_f64(key: &str, s: &str) -> Result<f64, ConfigError> {
    s.trim().parse::<f64>().map_err(|e| ConfigError::Value {
        key: key.into(),
        msg: e.to_string(),
    })
}

fn parse_usize(key: &str, s: &str) -> Result<usize, ConfigError> {
    s.trim().parse::<usize>().map_err(|e| ConfigError::Value {
        key: key.into(),
        msg: e.to_string(),
    })
}

fn parse_vec3(key: &str, s: &str) -> Result<Vector3<f64>, ConfigError> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(|p| parse_f64(key, p))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(ConfigError::Value {
            key: key.into(),
            msg: format!("expected 3 components, got {}", parts.len()),
        });
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn items(s: &str) -> impl Iterator<Item = &str> {
    s.split(';').map(str::trim).filter(|x| !x.is_empty())
}

fn parse_vec3_list(key: &str, s: &str) -> Result<Vec<Vector3<f64>>, ConfigError> {
    items(s).map(|x| parse_vec3(key, x)).collect()
}

fn parse_edges(key: &str, s: &str, sep: char) -> Result<Edges, ConfigError> {
    if s.trim() == "all" {
        return Ok(Edges::All);
    }
    items(s)
        .map(|item| {
            let (a, b) = item.split_once(sep).ok_or_else(|| ConfigError::Value {
                key: key.into(),
                msg: format!("edge `{item}` must look like a{sep}b"),
            })?;
            Ok((parse_usize(key, a)?, parse_usize(key, b)?))
        })
        .collect::<Result<_, _>>()
        .map(Edges::List)
}

fn parse_bool(key: &str, s: &str) -> Result<bool, ConfigError> {
    match s.trim() {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        other => Err(ConfigError::Value {
            key: key.into(),
            msg: format!("expected on/off, got `{other}`"),
        }),
    }
}

fn fmt_vec3(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

fn fmt_vec3_list(vs: &[Vector3<f64>]) -> String {
    vs.iter().map(fmt_vec3).collect::<Vec<_>>().join("; ")
}

fn fmt_edges(e: &Edges, sep: char) -> String {
    match e {
        Edges::All => "all".into(),
        Edges::List(l) => l
            .iter()
            .map(|(a, b)| format!("{a}{sep}{b}"))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or(ConfigError::MissingHeader)?;
        let version = header
            .strip_prefix(HEADER)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or(ConfigError::MissingHeader)?;
        if version != FORMAT_VERSION {
            return Err(ConfigError::Version(version));
        }

        let mut kv = BTreeMap::new();
        for (line, l) in lines {
            let (k, v) = l.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: "expected `key = value`".into(),
            })?;
            if kv
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key `{}`", k.trim()),
                });
            }
        }

        let mut s = Scenario::default();
        for (k, v) in &kv {
            let key = k.as_str();
            match key {
                "name" => s.name = v.clone(),
                "mode" => {
                    s.mode = match v.as_str() {
                        "planar" => Mode::Planar,
                        "spatial" => Mode::Spatial,
                        other => {
                            return Err(ConfigError::Value {
                                key: k.clone(),
                                msg: format!("unknown mode `{other}`"),
                            })
                        }
                    }
                }
                "n" => s.n = parse_usize(key, v)?,
                "seed" => {
                    s.seed = v
                        .parse()
                        .map_err(|e: std::num::ParseIntError| ConfigError::Value {
                            key: k.clone(),
                            msg: e.to_string(),
                        })?
                }
                "duration" => s.duration = parse_f64(key, v)?,
                "velocity_hz" => s.velocity_hz = parse_f64(key, v)?,
                "landmark_hz" => s.landmark_hz = parse_f64(key, v)?,
                "robot_hz" => s.robot_hz = parse_f64(key, v)?,
                "metrics_hz" => s.metrics_hz = parse_f64(key, v)?,
                "landmarks" => s.landmarks = parse_vec3_list(key, v)?,
                "landmark_edges" => s.landmark_edges = parse_edges(key, v, ':')?,
                "robot_edges" => s.robot_edges = parse_edges(key, v, '>')?,
                "markers" => s.markers = parse_vec3_list(key, v)?,
                "b" => s.b = parse_f64(key, v)?,
                "c" => s.c = parse_f64(key, v)?,
                "d" => s.d = parse_f64(key, v)?,
                "sensor_noise" => s.sensor_noise = parse_bool(key, v)?,
                "sigma0_rotation" => s.sigma0_rotation = parse_f64(key, v)?,
                "sigma0_translation" => s.sigma0_translation = parse_f64(key, v)?,
                "init_translation_error" => s.init_translation_error = parse_f64(key, v)?,
                "init_rotation_error" => s.init_rotation_error = parse_f64(key, v)?,
                "radius" => s.radius = parse_f64(key, v)?,
                "speed" => s.speed = parse_f64(key, v)?,
                "centres" => s.centres = parse_vec3_list(key, v)?,
                "phases" => {
                    s.phases = items(v)
                        .map(|x| parse_f64(key, x))
                        .collect::<Result<_, _>>()?
                }
                "half_extent" => s.half_extent = parse_f64(key, v)?,
                "ou_theta" => s.ou_theta = parse_f64(key, v)?,
                "ou_sigma_omega" => s.ou_sigma_omega = parse_f64(key, v)?,
                "ou_sigma_v" => s.ou_sigma_v = parse_f64(key, v)?,
                "mean_speed" => s.mean_speed = parse_f64(key, v)?,
                "max_omega" => s.max_omega = parse_f64(key, v)?,
                "max_speed" => s.max_speed = parse_f64(key, v)?,
                _ => return Err(ConfigError::UnknownKey(k.clone())),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn planar4() -> Self {
        Self::parse(PLANAR4).expect("shipped planar scenario parses")
    }

    pub fn spatial4() -> Self {
        Self::parse(SPATIAL4).expect("shipped spatial scenario parses")
    }

    /// Renders the scenario so that `parse(to_text(s)) == s`.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mode = match self.mode {
            Mode::Planar => "planar",
            Mode::Spatial => "spatial",
        };
        let _ = writeln!(o, "{HEADER} {FORMAT_VERSION}");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("mode", mode.into());
        kv("n", self.n.to_string());
        kv("seed", self.seed.to_string());
        kv("duration", self.duration.to_string());
        kv("velocity_hz", self.velocity_hz.to_string());
        kv("landmark_hz", self.landmark_hz.to_string());
        kv("robot_hz", self.robot_hz.to_string());
        kv("metrics_hz", self.metrics_hz.to_string());
        kv("landmarks", fmt_vec3_list(&self.landmarks));
        kv("landmark_edges", fmt_edges(&self.landmark_edges, ':'));
        kv("robot_edges", fmt_edges(&self.robot_edges, '>'));
        kv("markers", fmt_vec3_list(&self.markers));
        kv("b", self.b.to_string());
        kv("c", self.c.to_string());
        kv("d", self.d.to_string());
        kv(
            "sensor_noise",
            if self.sensor_noise { "on" } else { "off" }.into(),
        );
        kv("sigma0_rotation", self.sigma0_rotation.to_string());
        kv("sigma0_translation", self.sigma0_translation.to_string());
        kv(
            "init_translation_error",
            self.init_translation_error.to_string(),
        );
        kv("init_rotation_error", self.init_rotation_error.to_string());
        kv("radius", self.radius.to_string());
        kv("speed", self.speed.to_string());
        kv("centres", fmt_vec3_list(&self.centres));
        kv(
            "phases",
            self.phases
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        );
        kv("half_extent", self.half_extent.to_string());
        kv("ou_theta", self.ou_theta.to_string());
        kv("ou_sigma_omega", self.ou_sigma_omega.to_string());
        kv("ou_sigma_v", self.ou_sigma_v.to_string());
        kv("mean_speed", self.mean_speed.to_string());
        kv("max_omega", self.max_omega.to_string());
        kv("max_speed", self.max_speed.to_string());
        o
    }

    /// Number of velocity ticks per event of a rate, checked for alignment.
    fn period(&self, name: &'static str, hz: f64) -> Result<u64, ConfigError> {
        let ratio = self.velocity_hz / hz;
        let rounded = ratio.round();
        if !(hz > 0.0) || rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
            return Err(ConfigError::MisalignedRate {
                name,
                hz,
                base: self.velocity_hz,
            });
        }
        Ok(rounded as u64)
    }

    pub fn landmark_period(&self) -> u64 {
        self.period("landmark_hz", self.landmark_hz)
            .expect("validated")
    }

    pub fn robot_period(&self) -> u64 {
        self.period("robot_hz", self.robot_hz).expect("validated")
    }

    pub fn metrics_period(&self) -> u64 {
        self.period("metrics_hz", self.metrics_hz)
            .expect("validated")
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.velocity_hz
    }

    pub fn steps(&self) -> u64 {
        (self.duration * self.velocity_hz).round() as u64
    }

    pub fn marker(&self, robot: usize) -> Vector3<f64> {
        if self.markers.len() == 1 {
            self.markers[0]
        } else {
            self.markers[robot]
        }
    }

    /// `(robot, landmark)` pairs in measurement order.
    pub fn landmark_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = match &self.landmark_edges {
            Edges::All => (0..self.n)
                .flat_map(|i| (0..self.landmarks.len()).map(move |l| (i, l)))
                .collect(),
            Edges::List(l) => l.clone(),
        };
        pairs.sort_unstable();
        pairs
    }

    /// `(observer, observed)` pairs in measurement order.
    pub fn robot_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = match &self.robot_edges {
            Edges::All => (0..self.n)
                .flat_map(|i| (0..self.n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect(),
            Edges::List(l) => l.clone(),
        };
        pairs.sort_unstable();
        pairs
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.n == 0 {
            return invalid("n must be at least 1".into());
        }
        if !(self.velocity_hz > 0.0) {
            return invalid("velocity_hz must be positive".into());
        }
        self.period("landmark_hz", self.landmark_hz)?;
        self.period("robot_hz", self.robot_hz)?;
        self.period("metrics_hz", self.metrics_hz)?;
        let steps = self.duration * self.velocity_hz;
        if !(self.duration > 0.0) || (steps - steps.round()).abs() > 1e-6 {
            return invalid("duration must be a positive whole number of velocity ticks".into());
        }
        if self.markers.len() != 1 && self.markers.len() != self.n {
            return invalid(format!("markers: expected 1 or {} entries", self.n));
        }
        for (i, l) in self.landmark_pairs() {
            if i >= self.n || l >= self.landmarks.len() {
                return invalid(format!("landmark edge {i}:{l} out of range"));
            }
        }
        for (i, j) in self.robot_pairs() {
            if i >= self.n || j >= self.n || i == j {
                return invalid(format!("robot edge {i}>{j} invalid"));
            }
        }
        if self.c <= 0.0
            || self.d <= 0.0
            || self.sigma0_rotation <= 0.0
            || self.sigma0_translation <= 0.0
            || self.b < 0.0
        {
            return invalid("c, d and sigma0_* must be positive, b non-negative".into());
        }
        if self.mode == Mode::Planar
            && (self.centres.len() != self.n || self.phases.len() != self.n)
        {
            return invalid(format!("planar mode needs {} centres and phases", self.n));
        }
        if self.mode == Mode::Spatial && !(self.half_extent > 0.0) {
            return invalid("half_extent must be positive".into());
        }
        Ok(())
    }
}
