//! Fixed-horizon replanning: greedy lattice search refined by CMA-ES, the
//! RIG-tree and random baselines, and the mission executor.

mod mission;
mod predict;
mod rig;

pub use mission::{run_mission, MissionOutput, MissionSetup, MissionTrace, TrialRecord};
pub use predict::MapPredictor;
pub use rig::{rig_tree_build, rig_tree_plan, RigTree, RigVertex};

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cmaes::{cmaes_minimize, CmaesOptions};
use crate::slam::{ControlNoiseModel, PoseBelief, PoseGraph, SlamError};
use crate::trajectory::{build_trajectory, sample_sites, PolyTrajectory, TrajectoryBackend, TrajectoryError, Waypoints};
use crate::utility::{utility_evaluate, PredictionBundle, UtilityError, UtilityKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Slam(#[from] SlamError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error("invalid planner configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlannerKind {
    /// Greedy lattice search refined by CMA-ES.
    TwoStep,
    RigTree,
    Random,
}

impl PlannerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerKind::TwoStep => "twostep",
            PlannerKind::RigTree => "rig",
            PlannerKind::Random => "random",
        }
    }
}

/// Candidate viewpoints for the greedy search.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    points: Vec<Vector3<f64>>,
}

impl Lattice {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, PlanError> {
        if points.is_empty() {
            return Err(PlanError::Config("lattice must not be empty".into()));
        }
        Ok(Self { points })
    }

    /// `per_axis^3` points at cell centers of a uniform partition of the box.
    pub fn uniform(lower: &Vector3<f64>, upper: &Vector3<f64>, per_axis: usize) -> Result<Self, PlanError> {
        if per_axis == 0 {
            return Err(PlanError::Config("lattice needs at least one point per axis".into()));
        }
        let coord = |a: usize, i: usize| lower[a] + (upper[a] - lower[a]) * (i as f64 + 0.5) / per_axis as f64;
        let mut points = Vec::with_capacity(per_axis.pow(3));
        for k in 0..per_axis {
            for j in 0..per_axis {
                for i in 0..per_axis {
                    points.push(Vector3::new(coord(0, i), coord(1, j), coord(2, k)));
                }
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmaesSettings {
    /// Initial step in meters.
    pub sigma0: f64,
    pub max_evaluations: usize,
    pub population: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSettings {
    /// Branch expansion step in meters.
    pub step: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Waypoints per plan, including the clamped start.
    pub n_waypoints: usize,
    pub lattice: Lattice,
    pub cmaes: CmaesSettings,
    pub rig: RigSettings,
    pub utility: UtilityKind,
    pub backend: TrajectoryBackend,
    pub v_ref: f64,
    pub a_ref: f64,
    /// Rate of predicted odometry nodes along a trajectory, Hz.
    pub node_rate: f64,
    /// Field sensor rate, Hz.
    pub sensor_rate: f64,
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
    pub noise: ControlNoiseModel,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let mut errs = Vec::new();
        if self.n_waypoints < 2 {
            errs.push("n_waypoints must be at least 2");
        }
        if !(self.cmaes.sigma0 > 0.0) {
            errs.push("cmaes sigma0 must be positive");
        }
        if !(self.rig.step > 0.0) {
            errs.push("rig step must be positive");
        }
        if !(self.node_rate > 0.0 && self.sensor_rate > 0.0) {
            errs.push("rates must be positive");
        }
        if (0..3).any(|i| !(self.upper[i] >= self.lower[i])) {
            errs.push("workspace bounds are inverted");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PlanError::Config(errs.join("; ")))
        }
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.lower[i], self.upper[i]))
    }

    fn trajectory(&self, wp: &Waypoints) -> Result<PolyTrajectory, PlanError> {
        Ok(build_trajectory(wp, self.backend, self.v_ref, self.a_ref)?)
    }
}

/// Local copies used while planning one horizon.
#[derive(Debug, Clone)]
pub struct PlanningState {
    /// Solved graph whose last node is the current pose.
    pub graph: PoseGraph,
    pub predictor: MapPredictor,
    pub pose: PoseBelief,
    /// Mission time at the start of the plan, seconds.
    pub elapsed: f64,
}

/// Local time of the first measurement strictly after the plan starts, for
/// measurements taken at global multiples of `1 / rate`.
pub fn next_site_offset(elapsed: f64, rate: f64) -> f64 {
    let dt = 1.0 / rate;
    let k = (elapsed / dt + 1e-9).floor() + 1.0;
    k * dt - elapsed
}

/// One executed or predicted instant along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub is_site: bool,
}

/// Odometry instants at `node_rate`, measurement sites and the end, merged
/// and sorted. Sites closer than 1e-6 s to another event absorb it.
pub fn trajectory_events(duration: f64, node_rate: f64, site_times: &[f64]) -> Vec<Event> {
    let mut events: Vec<Event> = Vec::new();
    let dt = 1.0 / node_rate;
    let mut k = 1usize;
    while (k as f64) * dt < duration - 1e-6 {
        events.push(Event { time: k as f64 * dt, is_site: false });
        k += 1;
    }
    events.push(Event { time: duration, is_site: false });
    events.extend(site_times.iter().filter(|t| **t > 1e-9).map(|t| Event { time: *t, is_site: true }));
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut merged: Vec<Event> = Vec::with_capacity(events.len());
    for e in events {
        match merged.last_mut() {
            Some(last) if (e.time - last.time).abs() < 1e-6 => last.is_site |= e.is_site,
            _ => merged.push(e),
        }
    }
    merged
}

/// Predicted measurement outcome of a candidate plan.
#[derive(Debug, Clone)]
pub struct PlanEvaluation {
    pub score: f64,
    pub bundle: PredictionBundle,
    pub trajectory: PolyTrajectory,
}

/// Predict pose beliefs at `events` along `traj` from the state's graph.
/// Returns the extended graph and the belief at every event.
fn predict_events(
    graph: &PoseGraph,
    traj: &PolyTrajectory,
    events: &[Event],
    noise: &ControlNoiseModel,
) -> Result<(PoseGraph, Vec<PoseBelief>), PlanError> {
    let start = graph.last_node();
    let mut positions = Vec::with_capacity(events.len() + 1);
    positions.push(graph.node_estimate(start));
    positions.extend(events.iter().map(|e| traj.position(e.time)));
    let g = graph.extend_predicted(&positions, noise)?;
    let beliefs = (start + 1..g.node_count()).map(|i| g.belief(i)).collect::<Result<Vec<_>, _>>()?;
    Ok((g, beliefs))
}

/// Utility of executing the full trajectory through `wp`: measurement sites
/// at the global sensor phase (the end point if none fall inside), pose
/// beliefs predicted along the way, map trace rolled forward site by site.
pub fn evaluate_plan(state: &PlanningState, cfg: &PlannerConfig, utility: &UtilityKind, wp: &Waypoints) -> Result<PlanEvaluation, PlanError> {
    let traj = cfg.trajectory(wp)?;
    let duration = traj.total_duration();
    let offset = next_site_offset(state.elapsed, cfg.sensor_rate);
    let mut site_times = sample_sites(&traj, cfg.sensor_rate, offset).times;
    if site_times.is_empty() {
        site_times.push(duration);
    }
    let events = trajectory_events(duration, cfg.node_rate, &site_times);
    let (_, beliefs) = predict_events(&state.graph, &traj, &events, &cfg.noise)?;
    let mut predictor = state.predictor.clone();
    let mut pose_traces = Vec::new();
    for (e, b) in events.iter().zip(&beliefs) {
        if e.is_site {
            predictor.append(&b.mean, &b.covariance);
            pose_traces.push(b.trace());
        }
    }
    let bundle = PredictionBundle {
        prior_trace: state.predictor.trace(),
        posterior_trace: predictor.trace().max(f64::MIN_POSITIVE),
        pose_traces,
        duration,
    };
    let score = utility_evaluate(utility, &bundle)?;
    Ok(PlanEvaluation { score, bundle, trajectory: traj })
}

/// Outcome of moving along one straight segment and measuring at its end.
struct Step {
    score: f64,
    graph: PoseGraph,
    end: PoseBelief,
    duration: f64,
}

fn segment_step(
    graph: &PoseGraph,
    predictor: &MapPredictor,
    from: &Vector3<f64>,
    to: &Vector3<f64>,
    cfg: &PlannerConfig,
    utility: &UtilityKind,
    prior_trace: f64,
    prefix_traces: &[f64],
    prefix_duration: f64,
) -> Result<Step, PlanError> {
    let wp = Waypoints::new(vec![*from, *to])?;
    let traj = cfg.trajectory(&wp)?;
    let duration = traj.total_duration();
    let events = trajectory_events(duration, cfg.node_rate, &[]);
    let (g, beliefs) = predict_events(graph, &traj, &events, &cfg.noise)?;
    let end = beliefs.last().cloned().expect("segment has an end event");
    let reduction = predictor.site_reduction(&end.mean, &end.covariance);
    let mut pose_traces = prefix_traces.to_vec();
    pose_traces.push(end.trace());
    let bundle = PredictionBundle {
        prior_trace,
        posterior_trace: (predictor.trace() - reduction).max(f64::MIN_POSITIVE),
        pose_traces,
        duration: prefix_duration + duration,
    };
    let score = utility_evaluate(utility, &bundle)?;
    Ok(Step { score, graph: g.condensed()?, end, duration })
}

/// Index of the largest score; the lowest index wins ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Greedy viewpoint selection over the lattice. Each step scores every
/// lattice point by the single-step utility of flying there and measuring,
/// then rolls the local graph and map predictor forward.
pub fn greedy_grid_search(state: &PlanningState, cfg: &PlannerConfig, utility: &UtilityKind) -> Result<Waypoints, PlanError> {
    cfg.validate()?;
    let mut points = vec![state.pose.mean];
    let mut graph = state.graph.clone();
    let mut predictor = state.predictor.clone();
    while points.len() < cfg.n_waypoints {
        let here = *points.last().expect("non-empty");
        let prior = predictor.trace();
        let steps: Vec<Result<Step, PlanError>> = cfg
            .lattice
            .points()
            .par_iter()
            .map(|q| segment_step(&graph, &predictor, &here, q, cfg, utility, prior, &[], 0.0))
            .collect();
        let steps: Vec<Step> = steps.into_iter().collect::<Result<_, _>>()?;
        let scores: Vec<f64> = steps.iter().map(|s| s.score).collect();
        let best = argmax(&scores);
        let chosen = steps.into_iter().nth(best).expect("index in range");
        predictor.append(&chosen.end.mean, &chosen.end.covariance);
        graph = chosen.graph;
        points.push(cfg.lattice.points()[best]);
    }
    Ok(Waypoints::new(points)?)
}

fn flatten(wp: &Waypoints) -> DVector<f64> {
    DVector::from_iterator(3 * (wp.len() - 1), wp.points()[1..].iter().flat_map(|p| p.iter().copied()))
}

fn unflatten(start: &Vector3<f64>, x: &DVector<f64>) -> Waypoints {
    let mut pts = vec![*start];
    pts.extend((0..x.len() / 3).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])));
    Waypoints::new(pts).expect("at least two finite waypoints")
}

/// Objective value assigned to candidates whose prediction fails.
const FAILED_OBJECTIVE: f64 = 1e12;

/// Refine the free waypoints (all but the first) with CMA-ES, maximizing the
/// full-trajectory utility inside the workspace box. Returns the best-seen
/// waypoints and their score; the seed is always among the candidates.
pub fn cmaes_refine(
    seed: &Waypoints,
    state: &PlanningState,
    cfg: &PlannerConfig,
    utility: &UtilityKind,
    rng_seed: u64,
) -> Result<(Waypoints, f64), PlanError> {
    cfg.validate()?;
    let start = seed.points()[0];
    let seed_score = evaluate_plan(state, cfg, utility, seed)?.score;
    if cfg.cmaes.max_evaluations == 0 || seed.len() < 2 {
        return Ok((seed.clone(), seed_score));
    }
    let x0 = flatten(seed);
    let bounds: Vec<(f64, f64)> = (0..x0.len()).map(|i| (cfg.lower[i % 3], cfg.upper[i % 3])).collect();
    let objective = |x: &DVector<f64>| match evaluate_plan(state, cfg, utility, &unflatten(&start, x)) {
        Ok(e) => -e.score,
        Err(_) => FAILED_OBJECTIVE,
    };
    let opts = CmaesOptions {
        population: cfg.cmaes.population,
        max_evaluations: cfg.cmaes.max_evaluations,
        seed: rng_seed,
        bounds: Some(bounds),
        ..Default::default()
    };
    let r = cmaes_minimize(objective, &x0, cfg.cmaes.sigma0, &opts);
    if -r.value > seed_score {
        Ok((unflatten(&start, &r.x), -r.value))
    } else {
        Ok((seed.clone(), seed_score))
    }
}

/// Two-step replanning: greedy lattice seed, then CMA-ES refinement.
pub fn replan_two_step(state: &PlanningState, cfg: &PlannerConfig, utility: &UtilityKind, rng_seed: u64) -> Result<Waypoints, PlanError> {
    let seed = greedy_grid_search(state, cfg, utility)?;
    Ok(cmaes_refine(&seed, state, cfg, utility, rng_seed)?.0)
}

/// Start at the current pose mean, then `n - 1` destinations uniform in the
/// workspace box.
pub fn random_plan<R: Rng + ?Sized>(pose: &PoseBelief, n: usize, lower: &Vector3<f64>, upper: &Vector3<f64>, rng: &mut R) -> Waypoints {
    let n = n.max(2);
    let mut pts = vec![pose.mean];
    for _ in 1..n {
        pts.push(Vector3::from_fn(|i, _| lower[i] + rng.random::<f64>() * (upper[i] - lower[i])));
    }
    Waypoints::new(pts).expect("finite waypoints")
}

/// Upper bound on the mean pose trace over a horizon: dead reckoning along a
/// path of `n - 1` workspace diagonals.
pub fn pose_trace_bound(pose: &PoseBelief, cfg: &PlannerConfig) -> f64 {
    let diag = (cfg.upper - cfg.lower).norm();
    pose.trace() + cfg.noise.coefficient.sum() * (cfg.n_waypoints.saturating_sub(1)) as f64 * diag
}

/// Utility with bounds resolved for the current planning state.
pub fn resolve_utility(utility: &UtilityKind, state: &PlanningState, cfg: &PlannerConfig) -> UtilityKind {
    match *utility {
        UtilityKind::WeightedLinear { w_map, w_pose, map_bound, .. } => UtilityKind::WeightedLinear {
            w_map,
            w_pose,
            map_bound,
            pose_bound: pose_trace_bound(&state.pose, cfg).max(f64::MIN_POSITIVE),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests;
