//! Point-mass graph SLAM with a downward pinhole camera.
//!
//! Robot states are 3-D positions. Odometry factors are linear; landmark
//! factors project a 3-D point landmark into pixel coordinates plus depth.
//! The graph is solved by Gauss-Newton where each step is a dense QR
//! factorization of the whitened Jacobian; marginal covariances are recovered
//! from the triangular factor as `R^{-1} R^{-T}`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

/// Variances below this floor are raised to it before whitening.
pub const MIN_FACTOR_VARIANCE: f64 = 1e-10;
const MAX_GN_ITERATIONS: usize = 10;
const GN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlamError {
    #[error("linear system is singular (missing anchor or disconnected component)")]
    SingularSystem,
    #[error("factor references unknown variable: {0}")]
    UnknownVariable(String),
    #[error("graph has not been solved since its last modification")]
    NotSolved,
    #[error("prediction path must start at the current node estimate (offset {0:.3e} m)")]
    PredictionStart(f64),
    #[error("covariance must be symmetric positive definite")]
    InvalidCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseBelief {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl PoseBelief {
    pub fn new(mean: Vector3<f64>, covariance: Matrix3<f64>) -> Self {
        Self { mean, covariance }
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// Ground-truth point landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub position: Vector3<f64>,
}

/// Pinhole camera looking straight down (-z). Image `u` runs along world +x
/// and `v` along world +y; measurements are `(u, v, depth)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Full horizontal and vertical field of view in degrees.
    pub fov_deg: (f64, f64),
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    /// Image width and height in pixels.
    pub image_size: (f64, f64),
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { fov_deg: (47.9, 36.9), pixel_sigma: 1.0, depth_sigma: 0.1, image_size: (640.0, 480.0) }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), String> {
        let (h, v) = self.fov_deg;
        if !(h > 0.0 && h < 180.0 && v > 0.0 && v < 180.0) {
            return Err(format!("field of view ({h}, {v}) outside (0, 180) degrees"));
        }
        if !(self.pixel_sigma > 0.0 && self.depth_sigma > 0.0) {
            return Err("measurement noise must be positive".into());
        }
        if !(self.image_size.0 > 0.0 && self.image_size.1 > 0.0) {
            return Err("image size must be positive".into());
        }
        Ok(())
    }

    fn half_tan(&self) -> (f64, f64) {
        ((self.fov_deg.0.to_radians() / 2.0).tan(), (self.fov_deg.1.to_radians() / 2.0).tan())
    }

    pub fn focal(&self) -> (f64, f64) {
        let (th, tv) = self.half_tan();
        (self.image_size.0 / 2.0 / th, self.image_size.1 / 2.0 / tv)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.image_size.0 / 2.0, self.image_size.1 / 2.0)
    }

    /// Whether a landmark at offset `rel = landmark - camera` is in the frustum.
    pub fn is_visible(&self, rel: &Vector3<f64>) -> bool {
        let depth = -rel.z;
        if depth <= 1e-9 {
            return false;
        }
        let (th, tv) = self.half_tan();
        (rel.x / depth).abs() <= th && (rel.y / depth).abs() <= tv
    }

    /// Noise-free `(u, v, depth)` for offset `rel`.
    pub fn project(&self, rel: &Vector3<f64>) -> Vector3<f64> {
        let depth = -rel.z;
        let (fx, fy) = self.focal();
        let (cx, cy) = self.principal_point();
        Vector3::new(cx + fx * rel.x / depth, cy + fy * rel.y / depth, depth)
    }

    /// d(project)/d(rel).
    pub fn projection_jacobian(&self, rel: &Vector3<f64>) -> Matrix3<f64> {
        let z = -rel.z;
        let (fx, fy) = self.focal();
        Matrix3::new(
            fx / z, 0.0, fx * rel.x / (z * z),
            0.0, fy / z, fy * rel.y / (z * z),
            0.0, 0.0, -1.0,
        )
    }

    /// Landmark position from a camera position and a measurement.
    pub fn unproject(&self, camera: &Vector3<f64>, meas: &Vector3<f64>) -> Vector3<f64> {
        let (fx, fy) = self.focal();
        let (cx, cy) = self.principal_point();
        let depth = meas.z;
        camera + Vector3::new((meas.x - cx) * depth / fx, (meas.y - cy) * depth / fy, -depth)
    }

    pub fn noise_covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.pixel_sigma.powi(2),
            self.pixel_sigma.powi(2),
            self.depth_sigma.powi(2),
        ))
    }
}

/// Odometry noise whose variance grows with the commanded step length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlNoiseModel {
    pub coefficient: Vector3<f64>,
}

impl ControlNoiseModel {
    pub fn new(coefficient: Vector3<f64>) -> Self {
        Self { coefficient }
    }

    pub fn uniform(c: f64) -> Self {
        Self { coefficient: Vector3::repeat(c) }
    }

    /// `diag(coefficient * |control|)`.
    pub fn covariance(&self, control: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::from_diagonal(&(self.coefficient * control.norm()))
    }
}

/// Move the true robot by `control` plus sampled actuation noise. The
/// odometry reading is the commanded control.
pub fn simulate_step<R: Rng + ?Sized>(
    true_pose: &Vector3<f64>,
    control: &Vector3<f64>,
    noise: &ControlNoiseModel,
    rng: &mut R,
) -> (Vector3<f64>, Vector3<f64>) {
    let var = noise.coefficient * control.norm();
    let eps = Vector3::from_fn(|i, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * var[i].max(0.0).sqrt()
    });
    (true_pose + control + eps, *control)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub landmark: usize,
    /// `(u, v, depth)`
    pub measurement: Vector3<f64>,
}

/// Noisy measurements of every landmark inside the camera frustum.
pub fn observe_landmarks<R: Rng + ?Sized>(
    pose: &Vector3<f64>,
    landmarks: &[Landmark],
    cam: &CameraModel,
    rng: &mut R,
) -> Vec<Observation> {
    let px = Normal::new(0.0, cam.pixel_sigma).expect("pixel sigma");
    let depth = Normal::new(0.0, cam.depth_sigma).expect("depth sigma");
    landmarks
        .iter()
        .filter_map(|lm| {
            let rel = lm.position - pose;
            if !cam.is_visible(&rel) {
                return None;
            }
            let clean = cam.project(&rel);
            let noise = Vector3::new(px.sample(rng), px.sample(rng), depth.sample(rng));
            Some(Observation { landmark: lm.id, measurement: clean + noise })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    Node(usize),
    Landmark(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryFactor {
    pub from: usize,
    pub to: usize,
    pub delta: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFactor {
    pub node: usize,
    pub landmark: usize,
    pub measurement: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// Gaussian prior over a set of variables: residual `sqrt_info * (x - mean)`.
#[derive(Debug, Clone, PartialEq)]
struct PriorFactor {
    vars: Vec<Var>,
    mean: DVector<f64>,
    sqrt_info: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Solution {
    covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    camera: CameraModel,
    nodes: Vec<Vector3<f64>>,
    /// (landmark id, estimate) in insertion order
    landmarks: Vec<(usize, Vector3<f64>)>,
    odometry: Vec<OdometryFactor>,
    observations: Vec<LandmarkFactor>,
    priors: Vec<PriorFactor>,
    solution: Option<Solution>,
}

fn whitening(cov: &Matrix3<f64>) -> Result<Matrix3<f64>, SlamError> {
    let mut c = *cov;
    for i in 0..3 {
        c[(i, i)] = c[(i, i)].max(MIN_FACTOR_VARIANCE);
    }
    let l = c.cholesky().ok_or(SlamError::InvalidCovariance)?.unpack();
    l.try_inverse().ok_or(SlamError::InvalidCovariance)
}

impl PoseGraph {
    /// Graph with one node anchored by the prior `anchor`.
    pub fn new(camera: CameraModel, anchor: PoseBelief) -> Result<Self, SlamError> {
        let w = whitening(&anchor.covariance)?;
        let prior = PriorFactor {
            vars: vec![Var::Node(0)],
            mean: DVector::from_column_slice(anchor.mean.as_slice()),
            sqrt_info: DMatrix::from_column_slice(3, 3, w.as_slice()),
        };
        Ok(Self {
            camera,
            nodes: vec![anchor.mean],
            landmarks: Vec::new(),
            odometry: Vec::new(),
            observations: Vec::new(),
            priors: vec![prior],
            solution: None,
        })
    }

    /// Graph with no factors at all (for assembling custom problems).
    pub fn unanchored(camera: CameraModel, first_node: Vector3<f64>) -> Self {
        Self {
            camera,
            nodes: vec![first_node],
            landmarks: Vec::new(),
            odometry: Vec::new(),
            observations: Vec::new(),
            priors: Vec::new(),
            solution: None,
        }
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn last_node(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node_estimate(&self, i: usize) -> Vector3<f64> {
        self.nodes[i]
    }

    pub fn landmark_estimates(&self) -> &[(usize, Vector3<f64>)] {
        &self.landmarks
    }

    pub fn odometry_factors(&self) -> &[OdometryFactor] {
        &self.odometry
    }

    pub fn landmark_factors(&self) -> &[LandmarkFactor] {
        &self.observations
    }

    pub fn is_solved(&self) -> bool {
        self.solution.is_some()
    }

    fn landmark_slot(&self, id: usize) -> Option<usize> {
        self.landmarks.iter().position(|(lid, _)| *lid == id)
    }

    /// Append a node reached from the last node by `delta`; returns its index.
    pub fn add_odometry(&mut self, delta: Vector3<f64>, covariance: Matrix3<f64>) -> usize {
        let from = self.last_node();
        let to = self.nodes.len();
        self.nodes.push(self.nodes[from] + delta);
        self.odometry.push(OdometryFactor { from, to, delta, covariance });
        self.solution = None;
        to
    }

    /// Odometry factor between two existing nodes.
    pub fn add_odometry_between(&mut self, from: usize, to: usize, delta: Vector3<f64>, covariance: Matrix3<f64>) -> Result<(), SlamError> {
        if from >= self.nodes.len() || to >= self.nodes.len() {
            return Err(SlamError::UnknownVariable(format!("node {from} or {to}")));
        }
        self.odometry.push(OdometryFactor { from, to, delta, covariance });
        self.solution = None;
        Ok(())
    }

    /// Add an unconnected node with an initial estimate.
    pub fn add_node(&mut self, estimate: Vector3<f64>) -> usize {
        self.nodes.push(estimate);
        self.solution = None;
        self.nodes.len() - 1
    }

    /// Landmark observation from `node`. Unknown landmarks are initialized by
    /// inverse projection from the node's current estimate.
    pub fn add_observation(&mut self, node: usize, obs: &Observation) -> Result<(), SlamError> {
        if node >= self.nodes.len() {
            return Err(SlamError::UnknownVariable(format!("node {node}")));
        }
        if self.landmark_slot(obs.landmark).is_none() {
            let init = self.camera.unproject(&self.nodes[node], &obs.measurement);
            self.landmarks.push((obs.landmark, init));
        }
        self.observations.push(LandmarkFactor {
            node,
            landmark: obs.landmark,
            measurement: obs.measurement,
            covariance: self.camera.noise_covariance(),
        });
        self.solution = None;
        Ok(())
    }

    /// Prior on a single node.
    pub fn add_node_prior(&mut self, node: usize, belief: &PoseBelief) -> Result<(), SlamError> {
        if node >= self.nodes.len() {
            return Err(SlamError::UnknownVariable(format!("node {node}")));
        }
        let w = whitening(&belief.covariance)?;
        self.priors.push(PriorFactor {
            vars: vec![Var::Node(node)],
            mean: DVector::from_column_slice(belief.mean.as_slice()),
            sqrt_info: DMatrix::from_column_slice(3, 3, w.as_slice()),
        });
        self.solution = None;
        Ok(())
    }

    fn dim(&self) -> usize {
        3 * (self.nodes.len() + self.landmarks.len())
    }

    fn col(&self, v: Var) -> usize {
        match v {
            Var::Node(i) => 3 * i,
            Var::Landmark(s) => 3 * (self.nodes.len() + s),
        }
    }

    fn value(&self, v: Var) -> Vector3<f64> {
        match v {
            Var::Node(i) => self.nodes[i],
            Var::Landmark(s) => self.landmarks[s].1,
        }
    }

    fn row_count(&self) -> usize {
        self.priors.iter().map(|p| p.sqrt_info.nrows()).sum::<usize>()
            + 3 * (self.odometry.len() + self.observations.len())
    }

    /// Whitened Jacobian and residual at the current estimate.
    fn linearize(&self) -> Result<(DMatrix<f64>, DVector<f64>), SlamError> {
        let (rows, cols) = (self.row_count(), self.dim());
        let mut jac = DMatrix::zeros(rows, cols);
        let mut res = DVector::zeros(rows);
        let mut r = 0;

        for p in &self.priors {
            let k = p.sqrt_info.nrows();
            let mut x = DVector::zeros(3 * p.vars.len());
            for (b, v) in p.vars.iter().enumerate() {
                x.fixed_rows_mut::<3>(3 * b).copy_from(&self.value(*v));
            }
            res.rows_mut(r, k).copy_from(&(&p.sqrt_info * (x - &p.mean)));
            for (b, v) in p.vars.iter().enumerate() {
                let c = self.col(*v);
                jac.view_mut((r, c), (k, 3)).copy_from(&p.sqrt_info.columns(3 * b, 3));
            }
            r += k;
        }

        for f in &self.odometry {
            let w = whitening(&f.covariance)?;
            let e = self.nodes[f.to] - self.nodes[f.from] - f.delta;
            res.fixed_rows_mut::<3>(r).copy_from(&(w * e));
            jac.fixed_view_mut::<3, 3>(r, 3 * f.to).copy_from(&w);
            jac.fixed_view_mut::<3, 3>(r, 3 * f.from).copy_from(&(-w));
            r += 3;
        }

        for f in &self.observations {
            let slot = self
                .landmark_slot(f.landmark)
                .ok_or_else(|| SlamError::UnknownVariable(format!("landmark {}", f.landmark)))?;
            let w = whitening(&f.covariance)?;
            let rel = self.landmarks[slot].1 - self.nodes[f.node];
            if -rel.z <= 1e-9 {
                // behind the camera at this estimate: skip rows (left zero)
                r += 3;
                continue;
            }
            let e = self.camera.project(&rel) - f.measurement;
            let g = w * self.camera.projection_jacobian(&rel);
            res.fixed_rows_mut::<3>(r).copy_from(&(w * e));
            jac.fixed_view_mut::<3, 3>(r, self.col(Var::Landmark(slot))).copy_from(&g);
            jac.fixed_view_mut::<3, 3>(r, 3 * f.node).copy_from(&(-g));
            r += 3;
        }
        Ok((jac, res))
    }

    fn apply_update(&mut self, delta: &DVector<f64>) {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            *node += delta.fixed_rows::<3>(3 * i);
        }
        for (s, lm) in self.landmarks.iter_mut().enumerate() {
            lm.1 += delta.fixed_rows::<3>(3 * (n + s));
        }
    }

    /// Upper-triangular factor R of the whitened Jacobian, and the GN step.
    fn qr_step(&self) -> Result<(DMatrix<f64>, DVector<f64>), SlamError> {
        let (jac, res) = self.linearize()?;
        let n = jac.ncols();
        if jac.nrows() < n {
            return Err(SlamError::SingularSystem);
        }
        let qr = jac.qr();
        let r = qr.r();
        let max_diag = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r.diagonal().iter().any(|v| !(v.abs() > 1e-10 * max_diag)) {
            return Err(SlamError::SingularSystem);
        }
        let mut rhs = qr.q().transpose() * res;
        rhs.neg_mut();
        let step = r.solve_upper_triangular(&rhs).ok_or(SlamError::SingularSystem)?;
        Ok((r, step))
    }

    /// Gauss-Newton solve; updates estimates and caches the joint covariance.
    pub fn solve(&mut self) -> Result<Vec<PoseBelief>, SlamError> {
        let mut factor = None;
        for _ in 0..MAX_GN_ITERATIONS {
            let (r, step) = self.qr_step()?;
            self.apply_update(&step);
            if step.norm() < GN_TOLERANCE {
                factor = Some(r);
                break;
            }
        }
        let r = match factor {
            Some(r) => r,
            None => self.qr_step()?.0,
        };
        let n = r.nrows();
        let rinv = r
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or(SlamError::SingularSystem)?;
        let covariance = &rinv * rinv.transpose();
        self.solution = Some(Solution { covariance });
        Ok((0..self.nodes.len()).map(|i| self.belief(i).expect("solved")).collect())
    }

    fn block(&self, a: Var, b: Var) -> Result<Matrix3<f64>, SlamError> {
        let sol = self.solution.as_ref().ok_or(SlamError::NotSolved)?;
        Ok(sol.covariance.fixed_view::<3, 3>(self.col(a), self.col(b)).into_owned())
    }

    /// Marginal covariance of a node from the last solve.
    pub fn marginal_covariance(&self, node: usize) -> Result<Matrix3<f64>, SlamError> {
        if node >= self.nodes.len() {
            return Err(SlamError::UnknownVariable(format!("node {node}")));
        }
        self.block(Var::Node(node), Var::Node(node))
    }

    pub fn belief(&self, node: usize) -> Result<PoseBelief, SlamError> {
        Ok(PoseBelief::new(self.nodes[node], self.marginal_covariance(node)?))
    }

    /// Equivalent graph over the last node and all landmarks only: the rest
    /// of the graph is replaced by a joint Gaussian prior equal to their
    /// current joint marginal. The last node becomes node 0.
    pub fn condensed(&self) -> Result<PoseGraph, SlamError> {
        let sol = self.solution.as_ref().ok_or(SlamError::NotSolved)?;
        let mut vars = vec![Var::Node(self.last_node())];
        vars.extend((0..self.landmarks.len()).map(Var::Landmark));
        let k = 3 * vars.len();
        let cols: Vec<usize> = vars.iter().flat_map(|v| (0..3).map(move |d| (*v, d))).map(|(v, d)| self.col(v) + d).collect();
        let joint = DMatrix::from_fn(k, k, |i, j| sol.covariance[(cols[i], cols[j])]);
        let mut mean = DVector::zeros(k);
        for (b, v) in vars.iter().enumerate() {
            mean.fixed_rows_mut::<3>(3 * b).copy_from(&self.value(*v));
        }
        // info = joint^{-1} = L^{-T} L^{-1}; sqrt_info = L^{-1}
        let l = joint.cholesky().ok_or(SlamError::SingularSystem)?.unpack();
        let sqrt_info = l
            .solve_lower_triangular(&DMatrix::identity(k, k))
            .ok_or(SlamError::SingularSystem)?;

        let mut new_vars = vec![Var::Node(0)];
        new_vars.extend((0..self.landmarks.len()).map(Var::Landmark));
        Ok(PoseGraph {
            camera: self.camera,
            nodes: vec![self.nodes[self.last_node()]],
            landmarks: self.landmarks.clone(),
            odometry: Vec::new(),
            observations: Vec::new(),
            priors: vec![PriorFactor { vars: new_vars, mean, sqrt_info }],
            solution: None,
        })
    }

    /// Copy of the graph extended along `positions` (starting at the last
    /// node) with expected-case odometry and noise-free re-observations of
    /// known landmarks, solved.
    pub fn extend_predicted(&self, positions: &[Vector3<f64>], noise: &ControlNoiseModel) -> Result<PoseGraph, SlamError> {
        let mut g = self.clone();
        let Some(first) = positions.first() else {
            if g.solution.is_none() {
                g.solve()?;
            }
            return Ok(g);
        };
        let offset = (first - g.nodes[g.last_node()]).norm();
        if offset > 1e-6 {
            return Err(SlamError::PredictionStart(offset));
        }
        for w in positions.windows(2) {
            let delta = w[1] - w[0];
            let node = g.add_odometry(delta, noise.covariance(&delta));
            g.nodes[node] = w[1];
            let expected: Vec<Observation> = g
                .landmarks
                .iter()
                .filter_map(|(id, est)| {
                    let rel = est - w[1];
                    g.camera.is_visible(&rel).then(|| Observation { landmark: *id, measurement: g.camera.project(&rel) })
                })
                .collect();
            for obs in &expected {
                g.add_observation(node, obs)?;
            }
        }
        g.solve()?;
        Ok(g)
    }

    /// Predicted beliefs at `positions`: the current last node followed by one
    /// new node per remaining position.
    pub fn predict_along_path(&self, positions: &[Vector3<f64>], noise: &ControlNoiseModel) -> Result<Vec<PoseBelief>, SlamError> {
        let start = self.last_node();
        let g = self.extend_predicted(positions, noise)?;
        (start..g.node_count()).map(|i| g.belief(i)).collect()
    }
}

/// Solve `graph` in place and return every node's belief.
pub fn solve_graph(graph: &mut PoseGraph) -> Result<Vec<PoseBelief>, SlamError> {
    graph.solve()
}

/// Marginal covariance of `node` from the last solve of `graph`.
pub fn marginal_covariance(graph: &PoseGraph, node: usize) -> Result<Matrix3<f64>, SlamError> {
    graph.marginal_covariance(node)
}
