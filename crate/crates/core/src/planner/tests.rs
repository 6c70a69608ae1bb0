use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gp::{KernelMode, KernelSpec, QueryGrid};
use crate::slam::{CameraModel, Landmark, Observation};
use crate::uncertain::gauss_hermite_rule;

fn spec() -> KernelSpec {
    KernelSpec::squared_exponential(1.0, 0.6, 0.01).unwrap()
}

fn config(n: usize) -> PlannerConfig {
    let lower = Vector3::zeros();
    let upper = Vector3::repeat(2.0);
    PlannerConfig {
        n_waypoints: n,
        lattice: Lattice::uniform(&lower, &upper, 3).unwrap(),
        cmaes: CmaesSettings { sigma0: 0.3, max_evaluations: 60, population: None },
        rig: RigSettings { step: 1.0, iterations: 10 },
        utility: UtilityKind::RenyiCoupled,
        backend: TrajectoryBackend::MinimumSnap { order: 7 },
        v_ref: 1.5,
        a_ref: 3.0,
        node_rate: 0.5,
        sensor_rate: 0.25,
        lower,
        upper,
        noise: ControlNoiseModel::uniform(0.01),
    }
}

/// Solved graph at `pos` with landmarks observed noise-free from there.
fn graph_at(pos: Vector3<f64>, sigma2: f64, landmarks: &[Landmark]) -> PoseGraph {
    let cam = CameraModel::default();
    let mut g = PoseGraph::new(cam, PoseBelief::new(pos, Matrix3::identity() * sigma2)).unwrap();
    for lm in landmarks {
        let rel = lm.position - pos;
        if cam.is_visible(&rel) {
            g.add_observation(0, &Observation { landmark: lm.id, measurement: cam.project(&rel) }).unwrap();
        }
    }
    g.solve().unwrap();
    g
}

fn state_at(pos: Vector3<f64>, mode: KernelMode, landmarks: &[Landmark]) -> PlanningState {
    let grid = Arc::new(QueryGrid::new(Vector3::zeros(), Vector3::repeat(2.0), Vector3::repeat(0.5)).unwrap());
    let graph = graph_at(pos, 1e-3, landmarks);
    let pose = graph.belief(0).unwrap();
    let mut predictor = MapPredictor::new(spec(), mode, grid);
    predictor.append(&pose.mean, &pose.covariance);
    PlanningState { graph, predictor, pose, elapsed: 0.0 }
}

fn expected() -> KernelMode {
    KernelMode::Expected(gauss_hermite_rule(5).unwrap())
}

#[test]
fn lattice_of_one_point_is_forced() {
    let mut cfg = config(4);
    let q = Vector3::new(1.5, 0.5, 1.0);
    cfg.lattice = Lattice::new(vec![q]).unwrap();
    let state = state_at(Vector3::new(0.5, 0.5, 0.5), KernelMode::Plain, &[]);
    let wp = greedy_grid_search(&state, &cfg, &UtilityKind::RenyiCoupled).unwrap();
    assert_eq!(wp.points(), &[state.pose.mean, q, q, q]);
}

#[test]
fn uniform_lattice_geometry() {
    let l = Lattice::uniform(&Vector3::zeros(), &Vector3::repeat(3.0), 3).unwrap();
    assert_eq!(l.points().len(), 27);
    assert_eq!(l.points()[0], Vector3::repeat(0.5));
    assert_eq!(l.points()[26], Vector3::repeat(2.5));
    assert!(Lattice::new(vec![]).is_err());
}

#[test]
fn renyi_prefers_the_landmark_side() {
    // Mirror-symmetric candidates about x = 1: equal map gain, but only the
    // left one hovers over a landmark.
    let landmarks = [Landmark { id: 0, position: Vector3::new(0.4, 1.0, -1.0) }];
    let mut cfg = config(2);
    cfg.noise = ControlNoiseModel::uniform(0.05);
    let left = Vector3::new(0.4, 1.0, 1.0);
    let right = Vector3::new(1.6, 1.0, 1.0);
    cfg.lattice = Lattice::new(vec![right, left]).unwrap();
    let start = Vector3::new(1.0, 1.0, 1.0);
    let state = state_at(start, expected(), &landmarks);

    let step = |q: &Vector3<f64>, u: &UtilityKind| {
        segment_step(&state.graph, &state.predictor, &start, q, &cfg, u, state.predictor.trace(), &[], 0.0).unwrap()
    };
    let (sl, sr) = (step(&left, &UtilityKind::ShannonOnly), step(&right, &UtilityKind::ShannonOnly));
    assert!(sl.end.trace() < sr.end.trace());
    let wp = greedy_grid_search(&state, &cfg, &UtilityKind::RenyiCoupled).unwrap();
    assert_eq!(wp.points()[1], left);
    let (rl, rr) = (step(&left, &UtilityKind::RenyiCoupled), step(&right, &UtilityKind::RenyiCoupled));
    assert!(rl.score > rr.score);
}

#[test]
fn equal_pose_traces_leave_the_argmax_unchanged() {
    // Without landmarks every candidate at equal distance accrues the same
    // pose trace, so the discount is common to all of them.
    let mut cfg = config(2);
    let start = Vector3::new(1.0, 1.0, 1.0);
    let r = 0.7;
    cfg.lattice = Lattice::new(vec![
        start + Vector3::new(r, 0.0, 0.0),
        start + Vector3::new(0.0, -r, 0.0),
        start + Vector3::new(0.0, 0.0, r),
        start + Vector3::new(-r, 0.0, 0.0),
    ])
    .unwrap();
    let state = state_at(start, expected(), &[]);
    let a = greedy_grid_search(&state, &cfg, &UtilityKind::RenyiCoupled).unwrap();
    let b = greedy_grid_search(&state, &cfg, &UtilityKind::ShannonOnly).unwrap();
    assert_eq!(a, b);
}

#[test]
fn greedy_with_two_waypoints_is_the_exhaustive_argmax() {
    let cfg = config(2);
    let state = state_at(Vector3::new(0.7, 1.2, 0.4), expected(), &[]);
    let wp = greedy_grid_search(&state, &cfg, &UtilityKind::RenyiCoupled).unwrap();
    let start = state.pose.mean;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, q) in cfg.lattice.points().iter().enumerate() {
        let s = segment_step(&state.graph, &state.predictor, &start, q, &cfg, &UtilityKind::RenyiCoupled, state.predictor.trace(), &[], 0.0)
            .unwrap()
            .score;
        if s > best.1 {
            best = (i, s);
        }
    }
    assert_eq!(wp.points()[1], cfg.lattice.points()[best.0]);
}

#[test]
fn refinement_never_loses_to_its_seed() {
    let cfg = config(3);
    let landmarks = [Landmark { id: 0, position: Vector3::new(0.5, 0.5, -1.0) }];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..20 {
        let pos = Vector3::from_fn(|_, _| rng.random_range(0.2..1.8));
        let state = state_at(pos, KernelMode::Plain, &landmarks);
        let seed = greedy_grid_search(&state, &cfg, &UtilityKind::RenyiCoupled).unwrap();
        let seed_score = evaluate_plan(&state, &cfg, &UtilityKind::RenyiCoupled, &seed).unwrap().score;
        let (refined, score) = cmaes_refine(&seed, &state, &cfg, &UtilityKind::RenyiCoupled, k).unwrap();
        assert!(score >= seed_score, "state {k}: {score} < {seed_score}");
        assert_eq!(refined.points()[0], seed.points()[0]);
        let again = evaluate_plan(&state, &cfg, &UtilityKind::RenyiCoupled, &refined).unwrap().score;
        assert_eq!(again, score);
    }
}

#[test]
fn refinement_without_budget_returns_the_seed() {
    let mut cfg = config(3);
    cfg.cmaes.max_evaluations = 0;
    let state = state_at(Vector3::new(1.0, 1.0, 1.0), KernelMode::Plain, &[]);
    let seed = greedy_grid_search(&state, &cfg, &UtilityKind::RenyiCoupled).unwrap();
    let (out, _) = cmaes_refine(&seed, &state, &cfg, &UtilityKind::RenyiCoupled, 0).unwrap();
    assert_eq!(out, seed);
}

#[test]
fn rig_single_iteration_is_one_segment_toward_the_sample() {
    let mut cfg = config(4);
    cfg.rig = RigSettings { step: 0.5, iterations: 1 };
    let state = state_at(Vector3::new(1.0, 1.0, 1.0), KernelMode::Plain, &[]);
    let wp = rig_tree_plan(&state, &cfg, &UtilityKind::RenyiCoupled, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(wp.len(), 2);
    assert!(((wp.points()[1] - wp.points()[0]).norm() - 0.5).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = Vector3::from_fn(|i, _| cfg.lower[i] + rng.random::<f64>() * (cfg.upper[i] - cfg.lower[i]));
    let dir = (sample - wp.points()[0]).normalize();
    assert!(((wp.points()[1] - wp.points()[0]).normalize() - dir).norm() < 1e-12);
}

#[test]
fn rig_long_step_shoots_at_samples() {
    let mut cfg = config(4);
    cfg.rig = RigSettings { step: 10.0, iterations: 1 };
    let state = state_at(Vector3::new(1.0, 1.0, 1.0), KernelMode::Plain, &[]);
    let wp = rig_tree_plan(&state, &cfg, &UtilityKind::RenyiCoupled, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample = Vector3::from_fn(|i, _| cfg.lower[i] + rng.random::<f64>() * (cfg.upper[i] - cfg.lower[i]));
    assert_eq!(wp.points()[1], sample);
}

#[test]
fn rig_best_leaf_dominates_every_leaf() {
    let mut cfg = config(4);
    cfg.rig = RigSettings { step: 1.0, iterations: 60 };
    let landmarks = [Landmark { id: 0, position: Vector3::new(0.5, 1.0, -1.0) }];
    let state = state_at(Vector3::new(1.0, 1.0, 1.0), expected(), &landmarks);
    let tree = rig_tree_build(&state, &cfg, &UtilityKind::RenyiCoupled, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(tree.vertices.len(), 61);
    let best = tree.best_vertex().unwrap();
    let best_score = tree.vertices[best].score.unwrap();
    let is_parent: Vec<bool> = (0..tree.vertices.len()).map(|i| tree.vertices.iter().any(|v| v.parent == Some(i))).collect();
    for (i, v) in tree.vertices.iter().enumerate().skip(1) {
        assert!(v.depth <= cfg.n_waypoints - 1);
        if !is_parent[i] {
            assert!(best_score >= v.score.unwrap());
        }
    }
    let path = tree.path_to(best);
    assert_eq!(path[0], state.pose.mean);
    assert_eq!(path.len(), tree.vertices[best].depth + 1);
}

#[test]
fn rig_without_iterations_holds_position() {
    let mut cfg = config(4);
    cfg.rig.iterations = 0;
    let state = state_at(Vector3::new(1.0, 1.0, 1.0), KernelMode::Plain, &[]);
    let wp = rig_tree_plan(&state, &cfg, &UtilityKind::RenyiCoupled, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(wp.points(), &[state.pose.mean, state.pose.mean]);
}

#[test]
fn random_plan_statistics() {
    let lower = Vector3::new(-1.0, 0.0, 2.0);
    let upper = Vector3::new(1.0, 4.0, 3.0);
    let pose = PoseBelief::new(Vector3::new(0.1, 0.2, 2.5), Matrix3::identity());
    let a = random_plan(&pose, 4, &lower, &upper, &mut ChaCha8Rng::seed_from_u64(1));
    let b = random_plan(&pose, 4, &lower, &upper, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(a, b);
    assert_eq!(a.points()[0], pose.mean);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sum = Vector3::zeros();
    let mut count = 0.0;
    for _ in 0..10_000 {
        let wp = random_plan(&pose, 2, &lower, &upper, &mut rng);
        let p = wp.points()[1];
        assert!((0..3).all(|i| p[i] >= lower[i] && p[i] <= upper[i]));
        sum += p;
        count += 1.0;
    }
    let mean = sum / count;
    let center = (lower + upper) / 2.0;
    let width = upper - lower;
    for i in 0..3 {
        assert!((mean[i] - center[i]).abs() < 0.02 * width[i], "axis {i}: {} vs {}", mean[i], center[i]);
    }
}

#[test]
fn site_phase_follows_the_global_clock() {
    assert!((next_site_offset(0.0, 0.25) - 4.0).abs() < 1e-12);
    assert!((next_site_offset(3.0, 0.25) - 1.0).abs() < 1e-12);
    assert!((next_site_offset(4.0, 0.25) - 4.0).abs() < 1e-12);
    let ev = trajectory_events(5.0, 0.5, &[2.0, 4.5]);
    let times: Vec<f64> = ev.iter().map(|e| e.time).collect();
    assert_eq!(times, vec![2.0, 4.0, 4.5, 5.0]);
    assert!(ev[0].is_site && !ev[1].is_site && ev[2].is_site && !ev[3].is_site);
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = config(1);
    assert!(cfg.validate().is_err());
    cfg.n_waypoints = 3;
    cfg.cmaes.sigma0 = 0.0;
    assert!(matches!(cfg.validate(), Err(PlanError::Config(_))));
}
