//! Environment configuration records and the line-oriented config format.
//!
//! ```text
//! # comment
//! [env]
//! id = reach-v0
//! backend = sim
//! ...
//! [sensors.qpos]
//! kind = joint_pos
//! ```
//!
//! The full grammar lives in `docs/config-format.md`. Sensor sections are
//! kept in file order; that order is the observation key order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::sim::{RobotKind, RobotModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Sim,
    Hardware,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Position,
    Velocity,
    Torque,
}

impl ControlMode {
    pub fn code(self) -> u8 {
        match self {
            ControlMode::Position => 0,
            ControlMode::Velocity => 1,
            ControlMode::Torque => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ControlMode::Position,
            1 => ControlMode::Velocity,
            2 => ControlMode::Torque,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    JointPos,
    JointVel,
    EndEffectorPos,
    ObjectPose,
    GridCamera,
    Proprio,
    /// The episode's task goal (2-vector, or the target angle for the pendulum).
    Goal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    pub noise_sigma: f64,
    pub delay_steps: usize,
    pub camera_resolution: Option<(usize, usize)>,
}

impl SensorSpec {
    pub fn new(name: impl Into<String>, kind: SensorKind) -> Self {
        Self {
            name: name.into(),
            kind,
            noise_sigma: 0.0,
            delay_steps: 0,
            camera_resolution: None,
        }
    }

    pub fn camera(name: impl Into<String>, width: usize, height: usize) -> Self {
        Self {
            camera_resolution: Some((width, height)),
            ..Self::new(name, SensorKind::GridCamera)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    Push,
    PickPlace,
    PendulumSwingup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Goal position (2 values), or the upright angle (1 value) for the pendulum.
    pub target: Vec<f64>,
    pub success_radius: f64,
    pub goal_randomize: bool,
    /// Box the goal is drawn from when `goal_randomize` is set.
    pub goal_range: Option<(Vec2<f64>, Vec2<f64>)>,
    pub bin_center: Option<Vec2<f64>>,
    pub bin_radius: Option<f64>,
    /// Consecutive successful steps that end a PickPlace episode.
    pub success_latch: u32,
    pub n_objects: usize,
    pub object_radius: f64,
}

impl TaskSpec {
    pub fn target_point(&self) -> Vec2<f64> {
        Vec2::new(self.target[0], self.target.get(1).copied().unwrap_or(0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSpec {
    pub object_position_lo: Vec2<f64>,
    pub object_position_hi: Vec2<f64>,
    pub object_mass_range: (f64, f64),
    pub scene_palette_randomize: bool,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self {
            object_position_lo: Vec2::new(0.5, 0.0),
            object_position_hi: Vec2::new(0.5, 0.0),
            object_mass_range: (1.0, 1.0),
            scene_palette_randomize: false,
        }
    }
}

/// Declarative registration record for one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub env_id: String,
    pub robot: RobotModelSpec,
    pub backend: Backend,
    pub hardware_endpoint: Option<String>,
    pub control_mode: ControlMode,
    pub sensors: Vec<SensorSpec>,
    pub task: TaskSpec,
    pub horizon: u32,
    pub seed: u64,
    pub randomization: RandomizationSpec,
    pub frame_skip: u32,
    pub dt: f64,
}

/// `true` for ids of the form `name-vN`.
pub fn is_valid_env_id(id: &str) -> bool {
    let Some((name, ver)) = id.rsplit_once("-v") else {
        return false;
    };
    !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !ver.is_empty()
        && ver.chars().all(|c| c.is_ascii_digit())
}

/// The `_v2d` visual sibling of a state env id: `reach-v0` -> `reach_v2d-v0`.
pub fn visual_variant(id: &str) -> Option<String> {
    let (name, ver) = id.rsplit_once("-v")?;
    Some(format!("{name}_v2d-v{ver}"))
}

impl EnvConfig {
    pub fn joint_count(&self) -> usize {
        self.robot.link_lengths.len()
    }

    pub fn sensor_names(&self) -> impl Iterator<Item = &str> {
        self.sensors.iter().map(|s| s.name.as_str())
    }

    /// Checks every invariant; parse and all programmatic constructors go
    /// through here.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !is_valid_env_id(&self.env_id) {
            return Err(invalid(format!(
                "env_id '{}' must match [A-Za-z0-9_]+-v[0-9]+",
                self.env_id
            )));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon must be >= 1"));
        }
        if self.frame_skip < 1 {
            return Err(invalid("frame_skip must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be > 0"));
        }
        if self.backend == Backend::Hardware && self.hardware_endpoint.is_none() {
            return Err(invalid("hardware_endpoint required when backend = hardware"));
        }
        self.robot.validate().map_err(|e| invalid(e.to_string()))?;
        self.validate_sensors()?;
        self.validate_task()?;
        let r = &self.randomization;
        if r.object_position_lo.x > r.object_position_hi.x
            || r.object_position_lo.y > r.object_position_hi.y
        {
            return Err(invalid("randomization object_position range is empty (lo > hi)"));
        }
        if !(r.object_mass_range.0 > 0.0) || r.object_mass_range.0 > r.object_mass_range.1 {
            return Err(invalid("randomization object_mass_range must satisfy 0 < min <= max"));
        }
        Ok(())
    }

    fn validate_sensors(&self) -> Result<(), ConfigError> {
        for (i, s) in self.sensors.iter().enumerate() {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(invalid(format!("sensor name '{}' must be [A-Za-z0-9_]+", s.name)));
            }
            if self.sensors[..i].iter().any(|o| o.name == s.name) {
                return Err(invalid(format!("duplicate sensor '{}'", s.name)));
            }
            if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
                return Err(invalid(format!("sensor '{}': noise_sigma must be >= 0", s.name)));
            }
            match (s.kind, s.camera_resolution) {
                (SensorKind::GridCamera, None) => {
                    return Err(invalid(format!(
                        "sensor '{}': camera_resolution required for grid_camera",
                        s.name
                    )))
                }
                (SensorKind::GridCamera, Some((w, h))) if w == 0 || h == 0 => {
                    return Err(invalid(format!("sensor '{}': camera_resolution must be positive", s.name)))
                }
                (k, Some(_)) if k != SensorKind::GridCamera => {
                    return Err(invalid(format!(
                        "sensor '{}': camera_resolution only allowed for grid_camera",
                        s.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn validate_task(&self) -> Result<(), ConfigError> {
        let t = &self.task;
        if !(t.success_radius > 0.0) {
            return Err(invalid("task success_radius must be > 0"));
        }
        let want = if t.kind == TaskKind::PendulumSwingup { 1 } else { 2 };
        if t.target.len() != want {
            return Err(invalid(format!("task target must have {want} component(s)")));
        }
        if t.goal_randomize {
            match t.goal_range {
                Some((lo, hi)) if lo.x <= hi.x && lo.y <= hi.y => {}
                Some(_) => return Err(invalid("task goal range is empty (lo > hi)")),
                None => return Err(invalid("goal_randomize requires goal_lo and goal_hi")),
            }
        }
        if t.kind == TaskKind::PickPlace && (t.bin_center.is_none() || t.bin_radius.is_none()) {
            return Err(invalid("pick_place task requires bin_center and bin_radius"));
        }
        if matches!(t.kind, TaskKind::Push | TaskKind::PickPlace) && t.n_objects == 0 {
            return Err(invalid("push and pick_place tasks require n_objects >= 1"));
        }
        if !(t.object_radius > 0.0) {
            return Err(invalid("task object_radius must be > 0"));
        }
        if t.kind == TaskKind::PickPlace && t.success_latch == 0 {
            return Err(invalid("success_latch must be >= 1"));
        }
        let pendulum_robot = self.robot.kind == RobotKind::Pendulum;
        if pendulum_robot != (t.kind == TaskKind::PendulumSwingup) {
            return Err(invalid("pendulum_swingup task requires a pendulum robot and vice versa"));
        }
        Ok(())
    }

    /// Canonical text form; `parse_env_config(&cfg.to_config_string())`
    /// returns `cfg`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "[env]");
        let _ = writeln!(w, "id = {}", self.env_id);
        let _ = writeln!(w, "backend = {}", enum_name(&self.backend));
        if let Some(ep) = &self.hardware_endpoint {
            let _ = writeln!(w, "hardware_endpoint = {ep}");
        }
        let _ = writeln!(w, "control_mode = {}", enum_name(&self.control_mode));
        let _ = writeln!(w, "horizon = {}", self.horizon);
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "frame_skip = {}", self.frame_skip);
        let _ = writeln!(w, "dt = {:?}", self.dt);

        let r = &self.robot;
        let _ = writeln!(w, "\n[robot]");
        let _ = writeln!(w, "kind = {}", enum_name(&r.kind));
        let _ = writeln!(w, "link_lengths = {}", join(&r.link_lengths));
        let lo: Vec<f64> = r.joint_limits.iter().map(|l| l.0).collect();
        let hi: Vec<f64> = r.joint_limits.iter().map(|l| l.1).collect();
        let _ = writeln!(w, "joint_limits_lo = {}", join(&lo));
        let _ = writeln!(w, "joint_limits_hi = {}", join(&hi));
        let _ = writeln!(w, "torque_limits = {}", join(&r.torque_limits));
        let _ = writeln!(w, "gripper_radius = {:?}", r.gripper_radius);

        for sensor in &self.sensors {
            let _ = writeln!(w, "\n[sensors.{}]", sensor.name);
            let _ = writeln!(w, "kind = {}", enum_name(&sensor.kind));
            let _ = writeln!(w, "noise_sigma = {:?}", sensor.noise_sigma);
            let _ = writeln!(w, "delay_steps = {}", sensor.delay_steps);
            if let Some((cw, ch)) = sensor.camera_resolution {
                let _ = writeln!(w, "resolution = {cw}, {ch}");
            }
        }

        let t = &self.task;
        let _ = writeln!(w, "\n[task]");
        let _ = writeln!(w, "kind = {}", enum_name(&t.kind));
        let _ = writeln!(w, "target = {}", join(&t.target));
        let _ = writeln!(w, "success_radius = {:?}", t.success_radius);
        let _ = writeln!(w, "goal_randomize = {}", t.goal_randomize);
        if let Some((lo, hi)) = t.goal_range {
            let _ = writeln!(w, "goal_lo = {}", join(&lo.to_array()));
            let _ = writeln!(w, "goal_hi = {}", join(&hi.to_array()));
        }
        if let Some(c) = t.bin_center {
            let _ = writeln!(w, "bin_center = {}", join(&c.to_array()));
        }
        if let Some(br) = t.bin_radius {
            let _ = writeln!(w, "bin_radius = {br:?}");
        }
        let _ = writeln!(w, "success_latch = {}", t.success_latch);
        let _ = writeln!(w, "n_objects = {}", t.n_objects);
        let _ = writeln!(w, "object_radius = {:?}", t.object_radius);

        let rz = &self.randomization;
        let _ = writeln!(w, "\n[randomization]");
        let _ = writeln!(w, "object_position_lo = {}", join(&rz.object_position_lo.to_array()));
        let _ = writeln!(w, "object_position_hi = {}", join(&rz.object_position_hi.to_array()));
        let _ = writeln!(
            w,
            "object_mass_range = {}",
            join(&[rz.object_mass_range.0, rz.object_mass_range.1])
        );
        let _ = writeln!(w, "scene_palette_randomize = {}", rz.scene_palette_randomize);
        s
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Section {
    Env,
    Robot,
    Sensor(usize),
    Task,
    Randomization,
}

#[derive(Default)]
struct Draft {
    env: Vec<(usize, String, String)>,
    robot: Vec<(usize, String, String)>,
    sensors: Vec<(String, Vec<(usize, String, String)>)>,
    task: Vec<(usize, String, String)>,
    randomization: Vec<(usize, String, String)>,
    seen: Vec<&'static str>,
}

struct Fields {
    items: Vec<(usize, String, String)>,
    used: Vec<bool>,
    section: String,
}

impl Fields {
    fn new(section: &str, items: Vec<(usize, String, String)>) -> Self {
        let used = vec![false; items.len()];
        Self { items, used, section: section.to_owned() }
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let idx = self.items.iter().position(|(_, k, _)| k == key)?;
        self.used[idx] = true;
        Some((self.items[idx].0, self.items[idx].2.clone()))
    }

    fn required(&mut self, key: &str) -> Result<(usize, String), ConfigError> {
        self.take(key)
            .ok_or_else(|| invalid(format!("[{}] missing required key '{key}'", self.section)))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.items.iter().zip(&self.used).find(|(_, u)| !**u) {
            Some(((line, k, _), _)) => Err(ConfigError::Syntax {
                line: *line,
                msg: format!("unknown key '{k}' in [{}]", self.section),
            }),
            None => Ok(()),
        }
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line, msg: msg.into() }
}

fn parse_f64(line: usize, v: &str) -> Result<f64, ConfigError> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| syntax(line, format!("expected a real number, got '{}'", v.trim())))
}

fn parse_int<T: std::str::FromStr>(line: usize, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse::<T>()
        .map_err(|_| syntax(line, format!("expected an integer, got '{}'", v.trim())))
}

fn parse_bool(line: usize, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(syntax(line, format!("expected true or false, got '{other}'"))),
    }
}

fn parse_vec(line: usize, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|p| parse_f64(line, p)).collect()
}

fn parse_vec2(line: usize, v: &str) -> Result<Vec2<f64>, ConfigError> {
    match parse_vec(line, v)?.as_slice() {
        [x, y] => Ok(Vec2::new(*x, *y)),
        _ => Err(syntax(line, "expected two comma-separated reals")),
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(line: usize, v: &str, what: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(v.trim().to_owned()))
        .map_err(|_| syntax(line, format!("unknown {what} '{}'", v.trim())))
}

/// Parses and validates a configuration document.
pub fn parse_env_config(text: &str) -> Result<EnvConfig, ConfigError> {
    let mut draft = Draft::default();
    let mut section: Option<Section> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim();
            let once = |draft: &mut Draft, tag: &'static str| {
                if draft.seen.contains(&tag) {
                    Err(syntax(line, format!("duplicate section [{tag}]")))
                } else {
                    draft.seen.push(tag);
                    Ok(())
                }
            };
            section = Some(match name {
                "env" => {
                    once(&mut draft, "env")?;
                    Section::Env
                }
                "robot" => {
                    once(&mut draft, "robot")?;
                    Section::Robot
                }
                "task" => {
                    once(&mut draft, "task")?;
                    Section::Task
                }
                "randomization" => {
                    once(&mut draft, "randomization")?;
                    Section::Randomization
                }
                _ => match name.strip_prefix("sensors.") {
                    Some(sname) if !sname.is_empty() => {
                        if draft.sensors.iter().any(|(n, _)| n == sname) {
                            return Err(syntax(line, format!("duplicate section [sensors.{sname}]")));
                        }
                        draft.sensors.push((sname.to_owned(), Vec::new()));
                        Section::Sensor(draft.sensors.len() - 1)
                    }
                    _ => return Err(syntax(line, format!("unknown section [{name}]"))),
                },
            });
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected 'key = value'"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(syntax(line, "empty key"));
        }
        if v.is_empty() {
            return Err(syntax(line, format!("empty value for '{k}'")));
        }
        let bucket = match section {
            None => return Err(syntax(line, "key outside of any section")),
            Some(Section::Env) => &mut draft.env,
            Some(Section::Robot) => &mut draft.robot,
            Some(Section::Task) => &mut draft.task,
            Some(Section::Randomization) => &mut draft.randomization,
            Some(Section::Sensor(idx)) => &mut draft.sensors[idx].1,
        };
        if bucket.iter().any(|(_, existing, _)| existing == k) {
            return Err(syntax(line, format!("duplicate key '{k}'")));
        }
        bucket.push((line, k.to_owned(), v.to_owned()));
    }

    for required in ["env", "robot", "task"] {
        if !draft.seen.contains(&required) {
            return Err(invalid(format!("missing section [{required}]")));
        }
    }

    let mut env = Fields::new("env", draft.env);
    let (l, env_id) = env.required("id")?;
    if env_id.contains(char::is_whitespace) {
        return Err(syntax(l, "env id must not contain whitespace"));
    }
    let backend = match env.take("backend") {
        Some((l, v)) => parse_enum(l, &v, "backend")?,
        None => Backend::Sim,
    };
    let hardware_endpoint = env.take("hardware_endpoint").map(|(_, v)| v);
    let (l, v) = env.required("control_mode")?;
    let control_mode = parse_enum(l, &v, "control_mode")?;
    let (l, v) = env.required("horizon")?;
    let horizon = parse_int(l, &v)?;
    let seed = match env.take("seed") {
        Some((l, v)) => parse_int(l, &v)?,
        None => 0,
    };
    let frame_skip = match env.take("frame_skip") {
        Some((l, v)) => parse_int(l, &v)?,
        None => 1,
    };
    let (l, v) = env.required("dt")?;
    let dt = parse_f64(l, &v)?;
    env.finish()?;

    let mut rb = Fields::new("robot", draft.robot);
    let (l, v) = rb.required("kind")?;
    let kind: RobotKind = parse_enum(l, &v, "robot kind")?;
    let (l, v) = rb.required("link_lengths")?;
    let link_lengths = parse_vec(l, &v)?;
    let n = link_lengths.len();
    let joint_lo = match rb.take("joint_limits_lo") {
        Some((l, v)) => parse_vec(l, &v)?,
        None => vec![-std::f64::consts::PI; n],
    };
    let joint_hi = match rb.take("joint_limits_hi") {
        Some((l, v)) => parse_vec(l, &v)?,
        None => vec![std::f64::consts::PI; n],
    };
    if joint_lo.len() != joint_hi.len() {
        return Err(invalid("joint_limits_lo and joint_limits_hi lengths differ"));
    }
    let (l, v) = rb.required("torque_limits")?;
    let torque_limits = parse_vec(l, &v)?;
    let gripper_radius = match rb.take("gripper_radius") {
        Some((l, v)) => parse_f64(l, &v)?,
        None => 0.05,
    };
    rb.finish()?;
    let robot = RobotModelSpec {
        kind,
        link_lengths,
        joint_limits: joint_lo.into_iter().zip(joint_hi).collect(),
        torque_limits,
        gripper_radius,
    };

    let mut sensors = Vec::with_capacity(draft.sensors.len());
    for (name, items) in draft.sensors {
        let mut f = Fields::new(&format!("sensors.{name}"), items);
        let (l, v) = f.required("kind")?;
        let kind = parse_enum(l, &v, "sensor kind")?;
        let noise_sigma = match f.take("noise_sigma") {
            Some((l, v)) => parse_f64(l, &v)?,
            None => 0.0,
        };
        let delay_steps = match f.take("delay_steps") {
            Some((l, v)) => parse_int(l, &v)?,
            None => 0,
        };
        let camera_resolution = match f.take("resolution") {
            Some((l, v)) => {
                let parts: Vec<usize> = v.split(',').map(|p| parse_int(l, p)).collect::<Result<_, _>>()?;
                match parts.as_slice() {
                    [w, h] => Some((*w, *h)),
                    _ => return Err(syntax(l, "resolution expects 'width, height'")),
                }
            }
            None => None,
        };
        f.finish()?;
        sensors.push(SensorSpec { name, kind, noise_sigma, delay_steps, camera_resolution });
    }

    let mut tk = Fields::new("task", draft.task);
    let (l, v) = tk.required("kind")?;
    let task_kind: TaskKind = parse_enum(l, &v, "task kind")?;
    let (l, v) = tk.required("target")?;
    let target = parse_vec(l, &v)?;
    let (l, v) = tk.required("success_radius")?;
    let success_radius = parse_f64(l, &v)?;
    let goal_randomize = match tk.take("goal_randomize") {
        Some((l, v)) => parse_bool(l, &v)?,
        None => false,
    };
    let goal_lo = tk.take("goal_lo").map(|(l, v)| parse_vec2(l, &v)).transpose()?;
    let goal_hi = tk.take("goal_hi").map(|(l, v)| parse_vec2(l, &v)).transpose()?;
    let goal_range = match (goal_lo, goal_hi) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return Err(invalid("goal_lo and goal_hi must be given together")),
    };
    let bin_center = tk.take("bin_center").map(|(l, v)| parse_vec2(l, &v)).transpose()?;
    let bin_radius = tk.take("bin_radius").map(|(l, v)| parse_f64(l, &v)).transpose()?;
    let success_latch = match tk.take("success_latch") {
        Some((l, v)) => parse_int(l, &v)?,
        None => 5,
    };
    let default_objects = match task_kind {
        TaskKind::Push | TaskKind::PickPlace => 1,
        TaskKind::Reach | TaskKind::PendulumSwingup => 0,
    };
    let n_objects = match tk.take("n_objects") {
        Some((l, v)) => parse_int(l, &v)?,
        None => default_objects,
    };
    let object_radius = match tk.take("object_radius") {
        Some((l, v)) => parse_f64(l, &v)?,
        None => 0.05,
    };
    tk.finish()?;
    let task = TaskSpec {
        kind: task_kind,
        target,
        success_radius,
        goal_randomize,
        goal_range,
        bin_center,
        bin_radius,
        success_latch,
        n_objects,
        object_radius,
    };

    let mut randomization = RandomizationSpec::default();
    if draft.seen.contains(&"randomization") {
        let mut rz = Fields::new("randomization", draft.randomization);
        if let Some((l, v)) = rz.take("object_position_lo") {
            randomization.object_position_lo = parse_vec2(l, &v)?;
        }
        if let Some((l, v)) = rz.take("object_position_hi") {
            randomization.object_position_hi = parse_vec2(l, &v)?;
        }
        if let Some((l, v)) = rz.take("object_mass_range") {
            let m = parse_vec2(l, &v)?;
            randomization.object_mass_range = (m.x, m.y);
        }
        if let Some((l, v)) = rz.take("scene_palette_randomize") {
            randomization.scene_palette_randomize = parse_bool(l, &v)?;
        }
        rz.finish()?;
    }

    let cfg = EnvConfig {
        env_id,
        robot,
        backend,
        hardware_endpoint,
        control_mode,
        sensors,
        task,
        horizon,
        seed,
        randomization,
        frame_skip,
        dt,
    };
    cfg.validate()?;
    Ok(cfg)
}
