//! Synthetic worlds: Gaussian-random-field ground truth, landmark layout,
//! point-sensor sampling and evaluation metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::gp::{prior_covariance, KernelSpec, ObservedInput, Posterior, QueryGrid, TrainingSet};
use crate::slam::{Landmark, PoseBelief};

/// Diagonal regularization of the generator covariance.
pub const GRF_JITTER: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("could not factorize the field covariance")]
    FactorizationFailure,
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub origin: Vector3<f64>,
    pub extent: Vector3<f64>,
    pub resolution: Vector3<f64>,
    pub landmark_count: usize,
    /// Landmarks are spread over `x in [origin.x, origin.x + fraction * extent.x]`.
    pub landmark_fraction: f64,
    /// Vertical distance of the landmark plane below the field's lowest point.
    pub landmark_drop: f64,
    pub sensor_rate: f64,
    pub start: Vector3<f64>,
    pub budget: f64,
    /// Constant mean of the generated field.
    pub field_mean: f64,
}

impl WorldConfig {
    /// 2 m cube at 0.25 m resolution with four landmarks on one side.
    pub fn desk() -> Self {
        Self {
            origin: Vector3::zeros(),
            extent: Vector3::repeat(2.0),
            resolution: Vector3::repeat(0.25),
            landmark_count: 4,
            landmark_fraction: 0.2,
            landmark_drop: 1.0,
            sensor_rate: 0.25,
            start: Vector3::new(0.8, 0.8, 0.5),
            budget: 60.0,
            field_mean: 0.0,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.extent.iter().any(|e| !(*e >= 0.0)) {
            errs.push("world.extent must be non-negative".to_string());
        }
        if self.resolution.iter().any(|r| !(*r > 0.0)) {
            errs.push("world.resolution must be positive".to_string());
        }
        if !(self.sensor_rate > 0.0) {
            errs.push("world.sensor_rate must be positive".to_string());
        }
        if !(self.budget > 0.0) {
            errs.push("world.budget must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.landmark_fraction) {
            errs.push("world.landmark_fraction must be in [0, 1]".to_string());
        }
        if !self.contains(&self.start) {
            errs.push("world.start must lie inside the workspace".to_string());
        }
        errs
    }

    pub fn lower(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn upper(&self) -> Vector3<f64> {
        self.origin + self.extent
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.origin[i] - 1e-9 && p[i] <= self.origin[i] + self.extent[i] + 1e-9)
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.origin[i], self.origin[i] + self.extent[i]))
    }

    pub fn diagonal(&self) -> f64 {
        self.extent.norm()
    }

    pub fn grid(&self) -> Result<QueryGrid, SimError> {
        QueryGrid::new(self.origin, self.extent, self.resolution).map_err(|e| SimError::InvalidWorld(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField {
    pub grid: QueryGrid,
    pub values: DVector<f64>,
    pub spec: KernelSpec,
    pub seed: u64,
}

/// Lower factor `F` with `F F^T = cov`: Cholesky when possible, otherwise the
/// eigen square root with negative eigenvalues clipped.
fn covariance_factor(cov: DMatrix<f64>) -> Result<DMatrix<f64>, SimError> {
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.unpack());
    }
    let eig = SymmetricEigen::try_new(cov, 1e-14, 10_000).ok_or(SimError::FactorizationFailure)?;
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Draw a zero-mean field from `N(0, K + 1e-10 I)` on `grid`.
pub fn generate_grf(grid: &QueryGrid, spec: &KernelSpec, seed: u64) -> Result<GroundTruthField, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_grf_with(grid, spec, seed, &mut rng)
}

fn generate_grf_with<R: Rng>(grid: &QueryGrid, spec: &KernelSpec, seed: u64, rng: &mut R) -> Result<GroundTruthField, SimError> {
    let mut cov = prior_covariance(grid, spec);
    for i in 0..cov.nrows() {
        cov[(i, i)] += GRF_JITTER;
    }
    let factor = covariance_factor(cov)?;
    let z = DVector::from_fn(grid.len(), |_, _| StandardNormal.sample(rng));
    let values = factor * z;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SimError::FactorizationFailure);
    }
    Ok(GroundTruthField { grid: grid.clone(), values, spec: *spec, seed })
}

/// Field value at `position` by trilinear interpolation; positions outside
/// the grid are clamped onto it.
pub fn sample_field(field: &GroundTruthField, position: &Vector3<f64>) -> f64 {
    let grid = &field.grid;
    let counts = grid.counts();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        if counts[a] == 1 {
            continue;
        }
        let u = ((position[a] - grid.origin()[a]) / grid.resolution()[a]).clamp(0.0, (counts[a] - 1) as f64);
        let i = (u.floor() as usize).min(counts[a] - 2);
        lo[a] = i;
        hi[a] = i + 1;
        frac[a] = u - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let pick = |a: usize| corner >> a & 1 == 1;
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if pick(a) {
                w *= frac[a];
                idx[a] = hi[a];
            } else {
                w *= 1.0 - frac[a];
                idx[a] = lo[a];
            }
        }
        if w != 0.0 {
            acc += w * field.values[grid.index(idx[0], idx[1], idx[2])];
        }
    }
    acc
}

/// Landmarks uniform over one side of the workspace footprint, on a plane
/// `landmark_drop` below the workspace floor.
pub fn place_landmarks<R: Rng>(world: &WorldConfig, rng: &mut R) -> Vec<Landmark> {
    let z = world.origin.z - world.landmark_drop;
    (0..world.landmark_count)
        .map(|id| {
            let x = world.origin.x + rng.random::<f64>() * world.landmark_fraction * world.extent.x;
            let y = world.origin.y + rng.random::<f64>() * world.extent.y;
            Landmark { id, position: Vector3::new(x, y, z) }
        })
        .collect()
}

/// Noisy point-sensor readings at `count` uniform positions, located
/// exactly. Used to fit kernel hyperparameters for an environment.
pub fn survey_samples<R: Rng + ?Sized>(env: &Environment, count: usize, rng: &mut R) -> TrainingSet {
    let sigma = env.field.spec.hyperparams.noise_variance.sqrt();
    let (lo, hi) = (env.world.lower(), env.world.upper());
    let mut set = TrainingSet::default();
    for _ in 0..count {
        let p = Vector3::from_fn(|i, _| lo[i] + rng.random::<f64>() * (hi[i] - lo[i]));
        let z: f64 = StandardNormal.sample(rng);
        set.push(ObservedInput::exact(p), sample_field(&env.field, &p) + sigma * z);
    }
    set
}

/// One environment instance: ground truth and landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub world: WorldConfig,
    pub field: GroundTruthField,
    pub landmarks: Vec<Landmark>,
}

/// Build the environment for `seed`; the field and the landmarks come from
/// the same environment stream.
pub fn build_environment(world: &WorldConfig, spec: &KernelSpec, seed: u64) -> Result<Environment, SimError> {
    let errs = world.validate();
    if !errs.is_empty() {
        return Err(SimError::InvalidWorld(errs.join("; ")));
    }
    let grid = world.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = generate_grf_with(&grid, spec, seed, &mut rng)?;
    field.values.add_scalar_mut(world.field_mean);
    let landmarks = place_landmarks(world, &mut rng);
    Ok(Environment { world: world.clone(), field, landmarks })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tr_p: f64,
    pub map_rmse: f64,
    pub tr_sigma: f64,
    pub pose_err: f64,
}

pub fn compute_metrics(posterior: &Posterior, field: &GroundTruthField, belief: &PoseBelief, true_pose: &Vector3<f64>) -> Metrics {
    assert_eq!(posterior.mean.len(), field.values.len(), "posterior and field grids differ");
    let n = field.values.len() as f64;
    let sq: f64 = posterior.mean.iter().zip(field.values.iter()).map(|(m, t)| (m - t).powi(2)).sum();
    Metrics {
        tr_p: posterior.trace(),
        map_rmse: (sq / n).sqrt(),
        tr_sigma: belief.trace(),
        pose_err: (belief.mean - true_pose).norm(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn small_grid() -> QueryGrid {
        QueryGrid::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 0.5), Vector3::new(0.25, 0.25, 0.25)).unwrap()
    }

    #[test]
    fn long_length_scale_gives_flat_field() {
        let grid = small_grid();
        let spec = KernelSpec::squared_exponential(1.0, 100.0, 0.01).unwrap();
        let f = generate_grf(&grid, &spec, 3).unwrap();
        let (lo, hi) = (f.values.min(), f.values.max());
        assert!(hi - lo < 0.05, "spread {}", hi - lo);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = KernelSpec::squared_exponential(1.0, 0.4, 0.01).unwrap();
        let a = generate_grf(&small_grid(), &spec, 17).unwrap();
        let b = generate_grf(&small_grid(), &spec, 17).unwrap();
        let c = generate_grf(&small_grid(), &spec, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn grid_node_and_midpoint_interpolation() {
        let spec = KernelSpec::squared_exponential(1.0, 0.4, 0.01).unwrap();
        let f = generate_grf(&small_grid(), &spec, 2).unwrap();
        let g = &f.grid;
        let node = g.points()[g.index(2, 1, 1)];
        assert!((sample_field(&f, &node) - f.values[g.index(2, 1, 1)]).abs() < 1e-15);
        let mid = node + Vector3::new(0.125, 0.0, 0.0);
        let avg = 0.5 * (f.values[g.index(2, 1, 1)] + f.values[g.index(3, 1, 1)]);
        assert!((sample_field(&f, &mid) - avg).abs() < 1e-12);
    }

    #[test]
    fn outside_positions_are_clamped() {
        let spec = KernelSpec::squared_exponential(1.0, 0.4, 0.01).unwrap();
        let f = generate_grf(&small_grid(), &spec, 2).unwrap();
        let corner = f.values[f.grid.index(4, 4, 2)];
        assert_eq!(sample_field(&f, &Vector3::new(5.0, 5.0, 5.0)), corner);
    }

    #[test]
    fn flat_world_interpolates_in_plane() {
        let grid = QueryGrid::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 0.0), Vector3::repeat(0.5)).unwrap();
        let spec = KernelSpec::squared_exponential(1.0, 0.4, 0.01).unwrap();
        let f = generate_grf(&grid, &spec, 5).unwrap();
        let v = sample_field(&f, &Vector3::new(0.5, 0.25, 3.0));
        let expect = 0.5 * (f.values[grid.index(1, 0, 0)] + f.values[grid.index(1, 1, 0)]);
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn metric_examples() {
        let grid = small_grid();
        let spec = KernelSpec::squared_exponential(1.0, 0.4, 0.01).unwrap();
        let f = generate_grf(&grid, &spec, 1).unwrap();
        let n = grid.len();
        let exact = Posterior { mean: f.values.clone(), covariance: DMatrix::identity(n, n) };
        let p = Vector3::new(0.1, 0.2, 0.3);
        let belief = PoseBelief::new(p, Matrix3::identity() * 0.5);
        let m = compute_metrics(&exact, &f, &belief, &p);
        assert_eq!(m.map_rmse, 0.0);
        assert_eq!(m.pose_err, 0.0);
        assert_eq!(m.tr_p, n as f64);
        assert!((m.tr_sigma - 1.5).abs() < 1e-15);
        let shifted = Posterior { mean: f.values.add_scalar(1.0), covariance: DMatrix::identity(n, n) };
        assert!((compute_metrics(&shifted, &f, &belief, &p).map_rmse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn landmarks_on_one_side_below_floor() {
        let world = WorldConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lms = place_landmarks(&world, &mut rng);
        assert_eq!(lms.len(), 4);
        for lm in &lms {
            assert!(lm.position.x <= 1.0 && lm.position.x >= 0.0);
            assert_eq!(lm.position.z, -1.0);
        }
    }

    #[test]
    fn desk_world_is_valid() {
        let w = WorldConfig::desk();
        assert!(w.validate().is_empty());
        assert_eq!(w.grid().unwrap().len(), 729);
        let mut bad = w.clone();
        bad.budget = -1.0;
        bad.start = Vector3::repeat(9.0);
        assert_eq!(bad.validate().len(), 2);
    }
}
