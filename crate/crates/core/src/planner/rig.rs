//! Rapidly exploring information-gathering tree without pruning.

use nalgebra::Vector3;
use rand::Rng;

use super::{segment_step, PlanError, PlannerConfig, PlanningState};
use crate::slam::PoseGraph;
use crate::trajectory::Waypoints;
use crate::utility::UtilityKind;

use super::MapPredictor;

#[derive(Debug, Clone)]
pub struct RigVertex {
    pub position: Vector3<f64>,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Utility of the path from the root, `None` at the root.
    pub score: Option<f64>,
    /// Predicted pose traces at the measurement sites along the path.
    pub pose_traces: Vec<f64>,
    pub duration: f64,
    graph: PoseGraph,
    predictor: MapPredictor,
}

#[derive(Debug, Clone)]
pub struct RigTree {
    pub vertices: Vec<RigVertex>,
}

impl RigTree {
    /// Non-root vertex with the highest path score; lowest index on ties.
    pub fn best_vertex(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.vertices.iter().enumerate() {
            if let Some(s) = v.score {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Positions from the root to `vertex`.
    pub fn path_to(&self, vertex: usize) -> Vec<Vector3<f64>> {
        let mut path = Vec::new();
        let mut cur = Some(vertex);
        while let Some(i) = cur {
            path.push(self.vertices[i].position);
            cur = self.vertices[i].parent;
        }
        path.reverse();
        path
    }
}

/// Grow the tree: each iteration samples the workspace, steers at most
/// `cfg.rig.step` from the nearest vertex that can still be extended
/// (depth below `n_waypoints - 1`) and scores the path from the root with a
/// measurement at the new vertex.
pub fn rig_tree_build<R: Rng + ?Sized>(state: &PlanningState, cfg: &PlannerConfig, utility: &UtilityKind, rng: &mut R) -> Result<RigTree, PlanError> {
    cfg.validate()?;
    let max_depth = cfg.n_waypoints - 1;
    let root_trace = state.predictor.trace();
    let mut vertices = vec![RigVertex {
        position: state.pose.mean,
        parent: None,
        depth: 0,
        score: None,
        pose_traces: Vec::new(),
        duration: 0.0,
        graph: state.graph.clone(),
        predictor: state.predictor.clone(),
    }];
    for _ in 0..cfg.rig.iterations {
        let sample = Vector3::from_fn(|i, _| cfg.lower[i] + rng.random::<f64>() * (cfg.upper[i] - cfg.lower[i]));
        let nearest = vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.depth < max_depth)
            .map(|(i, v)| (i, (v.position - sample).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((near, dist)) = nearest else { break };
        let from = vertices[near].position;
        let to = if dist > cfg.rig.step { from + (sample - from) * (cfg.rig.step / dist) } else { sample };
        let parent = &vertices[near];
        let step = segment_step(
            &parent.graph,
            &parent.predictor,
            &from,
            &to,
            cfg,
            utility,
            root_trace,
            &parent.pose_traces,
            parent.duration,
        )?;
        let mut predictor = parent.predictor.clone();
        predictor.append(&step.end.mean, &step.end.covariance);
        let mut pose_traces = parent.pose_traces.clone();
        pose_traces.push(step.end.trace());
        let vertex = RigVertex {
            position: to,
            parent: Some(near),
            depth: parent.depth + 1,
            score: Some(step.score),
            pose_traces,
            duration: parent.duration + step.duration,
            graph: step.graph,
            predictor,
        };
        vertices.push(vertex);
    }
    Ok(RigTree { vertices })
}

/// Waypoints from the root to the best-scoring vertex. A tree without
/// children yields a hold at the current position.
pub fn rig_tree_plan<R: Rng + ?Sized>(state: &PlanningState, cfg: &PlannerConfig, utility: &UtilityKind, rng: &mut R) -> Result<Waypoints, PlanError> {
    let tree = rig_tree_build(state, cfg, utility, rng)?;
    let path = match tree.best_vertex() {
        Some(v) => tree.path_to(v),
        None => vec![state.pose.mean, state.pose.mean],
    };
    Ok(Waypoints::new(path)?)
}
