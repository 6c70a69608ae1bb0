//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted
//! (`world.extent = 2 2 2`). Vectors are whitespace-separated; the sweep
//! keys `planner.kind`, `utility.kind` and `mapping.mode` accept
//! comma-separated lists whose cartesian product defines the runs. Unknown
//! keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use amap_core::gp::{Hyperparams, KernelFamily, KernelSpec};
use amap_core::planner::PlannerKind;
use amap_core::sim::WorldConfig;
use amap_core::slam::{CameraModel, ControlNoiseModel};
use amap_core::trajectory::TrajectoryBackend;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MappingMode {
    Plain,
    Expected,
}

impl MappingMode {
    pub fn name(&self) -> &'static str {
        match self {
            MappingMode::Plain => "plain",
            MappingMode::Expected => "expected",
        }
    }
}

/// Utility family before per-replan bounds are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UtilityChoice {
    Renyi,
    Shannon,
    Rate,
    Linear,
}

impl UtilityChoice {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityChoice::Renyi => "renyi",
            UtilityChoice::Shannon => "shannon",
            UtilityChoice::Rate => "rate",
            UtilityChoice::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Fit hyperparameters per environment; otherwise use `kernel.*` as is.
    pub enabled: bool,
    pub samples: usize,
    pub restarts: usize,
    pub max_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSettings {
    pub kinds: Vec<PlannerKind>,
    pub n_waypoints: usize,
    pub lattice_per_axis: usize,
    pub cmaes_sigma0: f64,
    pub cmaes_evaluations: usize,
    pub cmaes_population: Option<usize>,
    pub rig_step: f64,
    pub rig_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    pub noise: ControlNoiseModel,
    pub initial_sigma: f64,
    pub v_ref: f64,
    pub a_ref: f64,
    pub node_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub world: WorldConfig,
    /// Generator of the ground truth; also the starting point for training.
    pub kernel: KernelSpec,
    pub training: TrainingConfig,
    pub camera: CameraModel,
    pub motion: MotionConfig,
    pub backend: TrajectoryBackend,
    pub planner: PlannerSettings,
    pub utilities: Vec<UtilityChoice>,
    pub w_map: f64,
    pub w_pose: f64,
    pub mapping_modes: Vec<MappingMode>,
    pub quadrature_order: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub output: PathBuf,
}

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Combination {
    pub planner: PlannerKind,
    pub utility: UtilityChoice,
    pub mapping: MappingMode,
}

impl Combination {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.planner.name(), self.utility.name(), self.mapping.name())
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            world: WorldConfig::desk(),
            kernel: KernelSpec::new(KernelFamily::SquaredExponential, Hyperparams { signal_variance: 1.0, length_scale: 1.0, noise_variance: 1e-3 }),
            training: TrainingConfig { enabled: true, samples: 60, restarts: 3, max_evaluations: 300 },
            camera: CameraModel::default(),
            motion: MotionConfig { noise: ControlNoiseModel::uniform(0.01), initial_sigma: 0.01, v_ref: 1.5, a_ref: 3.0, node_rate: 0.5 },
            backend: TrajectoryBackend::MinimumSnap { order: 12 },
            planner: PlannerSettings {
                kinds: vec![PlannerKind::TwoStep],
                n_waypoints: 4,
                lattice_per_axis: 3,
                cmaes_sigma0: 0.3,
                cmaes_evaluations: 150,
                cmaes_population: None,
                rig_step: 1.0,
                rig_iterations: 60,
            },
            utilities: vec![UtilityChoice::Renyi],
            w_map: 0.5,
            w_pose: 0.5,
            mapping_modes: vec![MappingMode::Expected],
            quadrature_order: 5,
            trials: 20,
            base_seed: 0,
            output: PathBuf::from("results"),
        }
    }

    /// Sweep points in planner, utility, mapping order.
    pub fn combinations(&self) -> Vec<Combination> {
        let mut out = Vec::new();
        for &planner in &self.planner.kinds {
            for &utility in &self.utilities {
                for &mapping in &self.mapping_modes {
                    out.push(Combination { planner, utility, mapping });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = self.world.validate();
        if let Err(e) = self.kernel.hyperparams.validate() {
            errs.push(format!("kernel: {e}"));
        }
        if let Err(e) = self.camera.validate() {
            errs.push(format!("camera: {e}"));
        }
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.trials >= 1, "experiment.trials must be at least 1");
        need(self.planner.n_waypoints >= 2, "planner.n_waypoints must be at least 2");
        need(self.planner.lattice_per_axis >= 1, "planner.lattice_per_axis must be at least 1");
        need(self.planner.cmaes_sigma0 > 0.0, "planner.cmaes_sigma0 must be positive");
        need(self.planner.rig_step > 0.0, "planner.rig_step must be positive");
        need(!self.planner.kinds.is_empty(), "planner.kind needs at least one value");
        need(!self.utilities.is_empty(), "utility.kind needs at least one value");
        need(!self.mapping_modes.is_empty(), "mapping.mode needs at least one value");
        need((1..=amap_core::uncertain::MAX_ORDER).contains(&self.quadrature_order), "mapping.quadrature_order must be in 1..=20");
        need(self.motion.v_ref > 0.0 && self.motion.a_ref > 0.0, "motion.v_ref and motion.a_ref must be positive");
        need(self.motion.node_rate > 0.0, "motion.node_rate must be positive");
        need(self.motion.initial_sigma >= 0.0, "motion.initial_sigma must be non-negative");
        need(self.motion.noise.coefficient.iter().all(|c| *c >= 0.0), "motion.noise_coefficient must be non-negative");
        need(self.w_map >= 0.0 && self.w_pose >= 0.0, "utility weights must be non-negative");
        need(!self.training.enabled || self.training.samples >= amap_core::gp::MIN_TRAINING_SAMPLES, "training.samples must be at least 5");
        if let TrajectoryBackend::MinimumSnap { order } = self.backend {
            need(order >= 5, "trajectory.order must be at least 5");
        }
        need(!self.name.is_empty() && !self.name.contains(['/', '\\']), "experiment.name must be a plain file stem");
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(errs))
        }
    }

    /// Resolved settings as `key = value` lines, parseable by [`parse_str`].
    pub fn to_kv(&self) -> String {
        let v3 = |v: &Vector3<f64>| format!("{} {} {}", v.x, v.y, v.z);
        let list = |names: Vec<&str>| names.join(", ");
        let h = &self.kernel.hyperparams;
        let mut lines = vec![
            format!("experiment.name = {}", self.name),
            format!("experiment.trials = {}", self.trials),
            format!("experiment.base_seed = {}", self.base_seed),
            format!("experiment.output = {}", self.output.display()),
            format!("world.origin = {}", v3(&self.world.origin)),
            format!("world.extent = {}", v3(&self.world.extent)),
            format!("world.resolution = {}", v3(&self.world.resolution)),
            format!("world.landmark_count = {}", self.world.landmark_count),
            format!("world.landmark_fraction = {}", self.world.landmark_fraction),
            format!("world.landmark_drop = {}", self.world.landmark_drop),
            format!("world.sensor_rate = {}", self.world.sensor_rate),
            format!("world.start = {}", v3(&self.world.start)),
            format!("world.budget = {}", self.world.budget),
            format!("world.field_mean = {}", self.world.field_mean),
            format!("kernel.family = {}", family_name(self.kernel.family)),
            format!("kernel.signal_variance = {}", h.signal_variance),
            format!("kernel.length_scale = {}", h.length_scale),
            format!("kernel.noise_variance = {}", h.noise_variance),
            format!("training.enabled = {}", self.training.enabled),
            format!("training.samples = {}", self.training.samples),
            format!("training.restarts = {}", self.training.restarts),
            format!("training.max_evaluations = {}", self.training.max_evaluations),
            format!("camera.fov_deg = {} {}", self.camera.fov_deg.0, self.camera.fov_deg.1),
            format!("camera.pixel_sigma = {}", self.camera.pixel_sigma),
            format!("camera.depth_sigma = {}", self.camera.depth_sigma),
            format!("camera.image_size = {} {}", self.camera.image_size.0, self.camera.image_size.1),
            format!("motion.noise_coefficient = {}", v3(&self.motion.noise.coefficient)),
            format!("motion.initial_sigma = {}", self.motion.initial_sigma),
            format!("motion.v_ref = {}", self.motion.v_ref),
            format!("motion.a_ref = {}", self.motion.a_ref),
            format!("motion.node_rate = {}", self.motion.node_rate),
        ];
        match self.backend {
            TrajectoryBackend::MinimumSnap { order } => {
                lines.push("trajectory.backend = minsnap".into());
                lines.push(format!("trajectory.order = {order}"));
            }
            TrajectoryBackend::PiecewiseLinear => lines.push("trajectory.backend = linear".into()),
        }
        let p = &self.planner;
        lines.extend([
            format!("planner.kind = {}", list(p.kinds.iter().map(|k| k.name()).collect())),
            format!("planner.n_waypoints = {}", p.n_waypoints),
            format!("planner.lattice_per_axis = {}", p.lattice_per_axis),
            format!("planner.cmaes_sigma0 = {}", p.cmaes_sigma0),
            format!("planner.cmaes_evaluations = {}", p.cmaes_evaluations),
        ]);
        if let Some(pop) = p.cmaes_population {
            lines.push(format!("planner.cmaes_population = {pop}"));
        }
        lines.extend([
            format!("planner.rig_step = {}", p.rig_step),
            format!("planner.rig_iterations = {}", p.rig_iterations),
            format!("utility.kind = {}", list(self.utilities.iter().map(|u| u.name()).collect())),
            format!("utility.w_map = {}", self.w_map),
            format!("utility.w_pose = {}", self.w_pose),
            format!("mapping.mode = {}", list(self.mapping_modes.iter().map(|m| m.name()).collect())),
            format!("mapping.quadrature_order = {}", self.quadrature_order),
        ]);
        lines.join("\n") + "\n"
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

fn family_name(f: KernelFamily) -> &'static str {
    match f {
        KernelFamily::SquaredExponential => "se",
        KernelFamily::Matern32 => "matern32",
        KernelFamily::Matern52 => "matern52",
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_str(&text, &path.display().to_string())
}

/// Parse settings on top of [`ExperimentConfig::desk`] and validate.
pub fn parse_str(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut cfg = ExperimentConfig::desk();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError::Parse { path: origin.to_string(), line: line_no, message };
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(prev) = seen.insert(key.to_string(), line_no) {
            return Err(err(format!("duplicate key `{key}` (first set on line {prev})")));
        }
        apply(&mut cfg, key, value).map_err(|m| err(format!("{key}: {m}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn floats(v: &str, n: usize) -> Result<Vec<f64>, String> {
    let xs: Vec<f64> = v.split_whitespace().map(num).collect::<Result<_, _>>()?;
    if xs.len() != n {
        return Err(format!("expected {n} numbers, got {}", xs.len()));
    }
    Ok(xs)
}

fn vec3(v: &str) -> Result<Vector3<f64>, String> {
    let xs = floats(v, 3)?;
    Ok(Vector3::new(xs[0], xs[1], xs[2]))
}

fn pair(v: &str) -> Result<(f64, f64), String> {
    let xs = floats(v, 2)?;
    Ok((xs[0], xs[1]))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn choices<T>(v: &str, parse: impl Fn(&str) -> Option<T>, allowed: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .map(|s| parse(s).ok_or_else(|| format!("unknown value `{s}` (allowed: {allowed})")))
        .collect()
}

fn apply(cfg: &mut ExperimentConfig, key: &str, v: &str) -> Result<(), String> {
    let h = &mut cfg.kernel.hyperparams;
    match key {
        "experiment.name" => cfg.name = v.to_string(),
        "experiment.trials" => cfg.trials = num(v)?,
        "experiment.base_seed" => cfg.base_seed = num(v)?,
        "experiment.output" => cfg.output = PathBuf::from(v),
        "world.origin" => cfg.world.origin = vec3(v)?,
        "world.extent" => cfg.world.extent = vec3(v)?,
        "world.resolution" => cfg.world.resolution = vec3(v)?,
        "world.landmark_count" => cfg.world.landmark_count = num(v)?,
        "world.landmark_fraction" => cfg.world.landmark_fraction = num(v)?,
        "world.landmark_drop" => cfg.world.landmark_drop = num(v)?,
        "world.sensor_rate" => cfg.world.sensor_rate = num(v)?,
        "world.start" => cfg.world.start = vec3(v)?,
        "world.budget" => cfg.world.budget = num(v)?,
        "world.field_mean" => cfg.world.field_mean = num(v)?,
        "kernel.family" => {
            cfg.kernel.family = match v {
                "se" => KernelFamily::SquaredExponential,
                "matern32" => KernelFamily::Matern32,
                "matern52" => KernelFamily::Matern52,
                _ => return Err(format!("unknown family `{v}` (allowed: se, matern32, matern52)")),
            }
        }
        "kernel.signal_variance" => h.signal_variance = num(v)?,
        "kernel.length_scale" => h.length_scale = num(v)?,
        "kernel.noise_variance" => h.noise_variance = num(v)?,
        "training.enabled" => cfg.training.enabled = boolean(v)?,
        "training.samples" => cfg.training.samples = num(v)?,
        "training.restarts" => cfg.training.restarts = num(v)?,
        "training.max_evaluations" => cfg.training.max_evaluations = num(v)?,
        "camera.fov_deg" => cfg.camera.fov_deg = pair(v)?,
        "camera.pixel_sigma" => cfg.camera.pixel_sigma = num(v)?,
        "camera.depth_sigma" => cfg.camera.depth_sigma = num(v)?,
        "camera.image_size" => cfg.camera.image_size = pair(v)?,
        "motion.noise_coefficient" => {
            cfg.motion.noise = match v.split_whitespace().count() {
                1 => ControlNoiseModel::uniform(num(v)?),
                _ => ControlNoiseModel::new(vec3(v)?),
            }
        }
        "motion.initial_sigma" => cfg.motion.initial_sigma = num(v)?,
        "motion.v_ref" => cfg.motion.v_ref = num(v)?,
        "motion.a_ref" => cfg.motion.a_ref = num(v)?,
        "motion.node_rate" => cfg.motion.node_rate = num(v)?,
        "trajectory.backend" => {
            cfg.backend = match v {
                "minsnap" => TrajectoryBackend::MinimumSnap { order: match cfg.backend {
                    TrajectoryBackend::MinimumSnap { order } => order,
                    TrajectoryBackend::PiecewiseLinear => 12,
                } },
                "linear" => TrajectoryBackend::PiecewiseLinear,
                _ => return Err(format!("unknown backend `{v}` (allowed: minsnap, linear)")),
            }
        }
        "trajectory.order" => match &mut cfg.backend {
            TrajectoryBackend::MinimumSnap { order } => *order = num(v)?,
            TrajectoryBackend::PiecewiseLinear => return Err("order only applies to the minsnap backend".into()),
        },
        "planner.kind" => {
            cfg.planner.kinds = choices(
                v,
                |s| match s {
                    "twostep" => Some(PlannerKind::TwoStep),
                    "rig" => Some(PlannerKind::RigTree),
                    "random" => Some(PlannerKind::Random),
                    _ => None,
                },
                "twostep, rig, random",
            )?
        }
        "planner.n_waypoints" => cfg.planner.n_waypoints = num(v)?,
        "planner.lattice_per_axis" => cfg.planner.lattice_per_axis = num(v)?,
        "planner.cmaes_sigma0" => cfg.planner.cmaes_sigma0 = num(v)?,
        "planner.cmaes_evaluations" => cfg.planner.cmaes_evaluations = num(v)?,
        "planner.cmaes_population" => cfg.planner.cmaes_population = Some(num(v)?),
        "planner.rig_step" => cfg.planner.rig_step = num(v)?,
        "planner.rig_iterations" => cfg.planner.rig_iterations = num(v)?,
        "utility.kind" => {
            cfg.utilities = choices(
                v,
                |s| match s {
                    "renyi" => Some(UtilityChoice::Renyi),
                    "shannon" => Some(UtilityChoice::Shannon),
                    "rate" => Some(UtilityChoice::Rate),
                    "linear" => Some(UtilityChoice::Linear),
                    _ => None,
                },
                "renyi, shannon, rate, linear",
            )?
        }
        "utility.w_map" => cfg.w_map = num(v)?,
        "utility.w_pose" => cfg.w_pose = num(v)?,
        "mapping.mode" => {
            cfg.mapping_modes = choices(
                v,
                |s| match s {
                    "plain" => Some(MappingMode::Plain),
                    "expected" => Some(MappingMode::Expected),
                    _ => None,
                },
                "plain, expected",
            )?
        }
        "mapping.quadrature_order" => cfg.quadrature_order = num(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}
