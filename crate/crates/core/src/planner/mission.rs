//! Replan-execute loop in a simulated environment.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    next_site_offset, random_plan, replan_two_step, resolve_utility, rig_tree_plan, trajectory_events, MapPredictor, PlanError,
    PlannerConfig, PlannerKind, PlanningState,
};
use crate::gp::{conditioned, plain_gram, prior_covariance, prior_mean, GpError, KernelMode, KernelSpec, ObservedInput, Posterior, QueryGrid, TrainingSet};
use crate::sim::{compute_metrics, sample_field, Environment, Metrics};
use crate::slam::{observe_landmarks, simulate_step, CameraModel, PoseBelief, PoseGraph};
use crate::trajectory::sample_sites;
use crate::uncertain::ExpectedGramCache;
use crate::utility::UtilityKind;

/// RNG stream for sensing and actuation noise.
pub const NOISE_STREAM: u64 = 1;
/// RNG stream for planner sampling.
pub const PLANNER_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct MissionSetup {
    /// Kernel used by the robot's field model.
    pub spec: KernelSpec,
    pub mode: KernelMode,
    pub planner: PlannerKind,
    pub utility: UtilityKind,
    pub cfg: PlannerConfig,
    pub camera: CameraModel,
    /// Standard deviation of the initial pose error per axis, meters.
    pub initial_pose_sigma: f64,
    /// Mission time budget, seconds.
    pub budget: f64,
}

/// Metrics logged at one field measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub time: f64,
    pub metrics: Metrics,
}

/// Executed path and final model, for rendering.
#[derive(Debug, Clone, Default)]
pub struct MissionTrace {
    pub true_path: Vec<Vector3<f64>>,
    pub estimated_path: Vec<Vector3<f64>>,
    pub sites: Vec<Vector3<f64>>,
    pub final_mean: Vec<f64>,
    /// Replans that fell back to random waypoints.
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct MissionOutput {
    pub records: Vec<TrialRecord>,
    pub trace: MissionTrace,
}

/// Live field model: training set plus cached Gram blocks.
struct FieldModel {
    spec: KernelSpec,
    mode: KernelMode,
    grid: Arc<QueryGrid>,
    kss: DMatrix<f64>,
    prior_mean: f64,
    train: TrainingSet,
    cache: Option<ExpectedGramCache>,
}

impl FieldModel {
    fn new(spec: KernelSpec, mode: KernelMode, grid: Arc<QueryGrid>, prior_mean: f64) -> Self {
        let kss = prior_covariance(&grid, &spec);
        let cache = match &mode {
            KernelMode::Expected(rule) => Some(ExpectedGramCache::new(spec, rule.clone())),
            KernelMode::Plain => None,
        };
        Self { spec, mode, grid, kss, prior_mean, train: TrainingSet::default(), cache }
    }

    fn posterior(&mut self) -> Result<Posterior, GpError> {
        let mut mean = prior_mean(&self.grid, self.prior_mean);
        let mut cov = self.kss.clone();
        if !self.train.is_empty() {
            match (&self.mode, self.cache.as_mut()) {
                (KernelMode::Expected(_), Some(cache)) => {
                    let (kxx, ksx) = cache.update(&self.train, &self.grid)?;
                    conditioned(&self.spec, kxx, ksx, self.train.targets(), self.prior_mean, &mut mean, &mut cov)?;
                }
                _ => {
                    let (kxx, ksx) = plain_gram(&self.spec, &self.train, &self.grid);
                    conditioned(&self.spec, &kxx, &ksx, self.train.targets(), self.prior_mean, &mut mean, &mut cov)?;
                }
            }
        }
        Ok(Posterior { mean, covariance: cov })
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Fly `env` under `setup` until the budget is spent.
///
/// Noise and planner randomness come from separate streams of `seed`. The
/// robot measures at `t = 0` and then at global multiples of the sensor
/// period; each measurement uses the solved pose belief as an uncertain
/// training input and logs one record. Execution of a plan stops at the last
/// event inside the budget.
pub fn run_mission(env: &Environment, setup: &MissionSetup, seed: u64) -> Result<MissionOutput, PlanError> {
    setup.cfg.validate()?;
    if !(setup.budget > 0.0) {
        return Err(PlanError::Config(format!("budget must be positive, got {}", setup.budget)));
    }
    let mut noise_rng = stream(seed, NOISE_STREAM);
    let mut plan_rng = stream(seed, PLANNER_STREAM);
    let cfg = &setup.cfg;
    let sensor_sigma = env.field.spec.hyperparams.noise_variance.sqrt();
    let grid = Arc::new(env.field.grid.clone());

    let s0 = setup.initial_pose_sigma;
    let start = env.world.start;
    let mut true_pose = start + Vector3::from_fn(|_, _| s0 * gaussian(&mut noise_rng));
    let mut graph = PoseGraph::new(setup.camera, PoseBelief::new(start, Matrix3::identity() * (s0 * s0).max(1e-12)))?;
    for obs in observe_landmarks(&true_pose, &env.landmarks, &setup.camera, &mut noise_rng) {
        graph.add_observation(0, &obs)?;
    }
    graph.solve()?;
    let mut belief = graph.belief(0)?;

    let mut model = FieldModel::new(setup.spec, setup.mode.clone(), grid.clone(), env.world.field_mean);
    let mut predictor = MapPredictor::new(setup.spec, setup.mode.clone(), grid);
    let mut records = Vec::new();
    let mut trace = MissionTrace { true_path: vec![true_pose], estimated_path: vec![belief.mean], ..Default::default() };

    let measure = |time: f64,
                       true_pose: &Vector3<f64>,
                       belief: &PoseBelief,
                       noise_rng: &mut ChaCha8Rng,
                       model: &mut FieldModel,
                       predictor: &mut MapPredictor,
                       records: &mut Vec<TrialRecord>,
                       trace: &mut MissionTrace|
     -> Result<Posterior, PlanError> {
        let y = sample_field(&env.field, true_pose) + sensor_sigma * gaussian(noise_rng);
        let input = ObservedInput::new(belief.mean, belief.covariance).unwrap_or_else(|_| ObservedInput::exact(belief.mean));
        model.train.push(input, y);
        predictor.append(&belief.mean, &belief.covariance);
        let posterior = model.posterior().map_err(|e| PlanError::Config(format!("field model: {e}")))?;
        records.push(TrialRecord { time, metrics: compute_metrics(&posterior, &env.field, belief, true_pose) });
        trace.sites.push(*true_pose);
        Ok(posterior)
    };

    let mut posterior = measure(0.0, &true_pose, &belief, &mut noise_rng, &mut model, &mut predictor, &mut records, &mut trace)?;
    let mut elapsed = 0.0;
    while elapsed < setup.budget {
        let state = PlanningState { graph: graph.condensed()?, predictor: predictor.clone(), pose: belief.clone(), elapsed };
        let utility = resolve_utility(&setup.utility, &state, cfg);
        let plan_seed: u64 = plan_rng.random();
        let planned = match setup.planner {
            PlannerKind::TwoStep => replan_two_step(&state, cfg, &utility, plan_seed),
            PlannerKind::RigTree => rig_tree_plan(&state, cfg, &utility, &mut plan_rng),
            PlannerKind::Random => Ok(random_plan(&belief, cfg.n_waypoints, &cfg.lower, &cfg.upper, &mut plan_rng)),
        };
        let wp = match planned {
            Ok(wp) => wp,
            Err(e) => {
                log::warn!("replan at t = {elapsed:.2} s failed ({e}); flying random waypoints");
                trace.fallbacks += 1;
                random_plan(&belief, cfg.n_waypoints, &cfg.lower, &cfg.upper, &mut plan_rng)
            }
        };
        let traj = setup.cfg.trajectory(&wp)?;
        let offset = next_site_offset(elapsed, cfg.sensor_rate);
        let sites = sample_sites(&traj, cfg.sensor_rate, offset).times;
        let events = trajectory_events(traj.total_duration(), cfg.node_rate, &sites);

        let mut prev_pos = traj.position(0.0);
        let mut executed = 0.0;
        for e in events.iter().take_while(|e| elapsed + e.time <= setup.budget + 1e-9) {
            let pos = traj.position(e.time);
            let control = pos - prev_pos;
            let (next_true, odo) = simulate_step(&true_pose, &control, &cfg.noise, &mut noise_rng);
            true_pose = next_true;
            let node = graph.add_odometry(odo, cfg.noise.covariance(&control));
            for obs in observe_landmarks(&true_pose, &env.landmarks, &setup.camera, &mut noise_rng) {
                graph.add_observation(node, &obs)?;
            }
            trace.true_path.push(true_pose);
            if e.is_site {
                graph.solve()?;
                belief = graph.belief(node)?;
                posterior =
                    measure(elapsed + e.time, &true_pose, &belief, &mut noise_rng, &mut model, &mut predictor, &mut records, &mut trace)?;
            }
            trace.estimated_path.push(graph.node_estimate(node));
            prev_pos = pos;
            executed = e.time;
        }
        if executed <= 0.0 {
            break;
        }
        graph.solve()?;
        belief = graph.belief(graph.last_node())?;
        elapsed += executed;
    }
    trace.final_mean = posterior.mean.iter().copied().collect();
    Ok(MissionOutput { records, trace })
}
