//! Gaussian-process regression over a fixed 3-D query grid.
//!
//! The field model conditions a stationary, isotropic kernel on point
//! measurements. Training inputs carry a position covariance so the same
//! training set can be used with plain kernels (means only) or with the
//! expected kernel of [`crate::uncertain`].

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::{cholesky_with_jitter, nelder_mead, symmetrize};
use crate::uncertain::{expected_gram, GaussHermiteRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("hyperparameters must be strictly positive and finite: {0}")]
    InvalidHyperparams(String),
    #[error("training set has {inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("input covariance is not symmetric positive semidefinite")]
    InvalidCovariance,
    #[error("invalid query grid: {0}")]
    InvalidGrid(String),
    #[error("gram matrix not factorizable even after maximum jitter")]
    DegenerateGram,
    #[error("hyperparameter training needs at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("marginal likelihood could not be evaluated anywhere on the search domain")]
    IllConditioned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// sigma_f^2
    pub signal_variance: f64,
    /// isotropic length scale in meters
    pub length_scale: f64,
    /// sigma_n^2, observation noise variance
    pub noise_variance: f64,
}

impl Hyperparams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self, GpError> {
        let h = Self { signal_variance, length_scale, noise_variance };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        for (name, v) in [
            ("signal_variance", self.signal_variance),
            ("length_scale", self.length_scale),
            ("noise_variance", self.noise_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GpError::InvalidHyperparams(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    fn to_log(self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.signal_variance.ln(),
            self.length_scale.ln(),
            self.noise_variance.ln(),
        ])
    }

    fn from_log(x: &DVector<f64>) -> Self {
        Self { signal_variance: x[0].exp(), length_scale: x[1].exp(), noise_variance: x[2].exp() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
    Matern52,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub hyperparams: Hyperparams,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, hyperparams: Hyperparams) -> Self {
        Self { family, hyperparams }
    }

    pub fn squared_exponential(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self, GpError> {
        Ok(Self::new(
            KernelFamily::SquaredExponential,
            Hyperparams::new(signal_variance, length_scale, noise_variance)?,
        ))
    }

    pub fn with_hyperparams(self, hyperparams: Hyperparams) -> Self {
        Self { hyperparams, ..self }
    }

    pub fn signal_variance(&self) -> f64 {
        self.hyperparams.signal_variance
    }

    /// Kernel value as a function of the squared distance between inputs.
    #[inline]
    pub fn eval_sq_dist(&self, r2: f64) -> f64 {
        let Hyperparams { signal_variance: s2, length_scale: l, .. } = self.hyperparams;
        match self.family {
            KernelFamily::SquaredExponential => s2 * (-0.5 * r2 / (l * l)).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * r2.sqrt() / l;
                s2 * (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * r2.sqrt() / l;
                s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: &Vector3<f64>, y: &Vector3<f64>) -> f64 {
        self.eval_sq_dist((x - y).norm_squared())
    }
}

/// k(x, x') for a stationary isotropic kernel.
pub fn kernel_eval(spec: &KernelSpec, x: &Vector3<f64>, y: &Vector3<f64>) -> f64 {
    spec.eval(x, y)
}

/// A training location: the believed robot position and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedInput {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl ObservedInput {
    pub fn new(mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self, GpError> {
        if !is_psd3(&covariance) {
            return Err(GpError::InvalidCovariance);
        }
        Ok(Self { mean, covariance })
    }

    pub fn exact(mean: Vector3<f64>) -> Self {
        Self { mean, covariance: Matrix3::zeros() }
    }
}

fn is_psd3(m: &Matrix3<f64>) -> bool {
    if !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let scale = m.abs().max().max(1e-300);
    if (m - m.transpose()).abs().max() > 1e-9 * scale {
        return false;
    }
    let eig = m.symmetric_eigenvalues();
    eig.iter().all(|&e| e >= -1e-9 * scale)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    inputs: Vec<ObservedInput>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<ObservedInput>, targets: Vec<f64>) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::LengthMismatch { inputs: inputs.len(), targets: targets.len() });
        }
        if inputs.iter().any(|i| !is_psd3(&i.covariance)) {
            return Err(GpError::InvalidCovariance);
        }
        Ok(Self { inputs, targets })
    }

    pub fn push(&mut self, input: ObservedInput, target: f64) {
        self.inputs.push(input);
        self.targets.push(target);
    }

    pub fn inputs(&self) -> &[ObservedInput] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Regular lattice of query points.
///
/// Points are enumerated with x varying fastest, then y, then z:
/// `index = (iz * ny + iy) * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    origin: Vector3<f64>,
    extent: Vector3<f64>,
    resolution: Vector3<f64>,
    counts: [usize; 3],
    points: Vec<Vector3<f64>>,
}

impl QueryGrid {
    /// Lattice covering `[origin, origin + extent]` inclusively. An axis with
    /// zero extent holds a single layer, which gives 2-D worlds.
    pub fn new(origin: Vector3<f64>, extent: Vector3<f64>, resolution: Vector3<f64>) -> Result<Self, GpError> {
        let mut counts = [0usize; 3];
        for a in 0..3 {
            if !(extent[a].is_finite() && extent[a] >= 0.0) {
                return Err(GpError::InvalidGrid(format!("extent[{a}] = {}", extent[a])));
            }
            if !(resolution[a].is_finite() && resolution[a] > 0.0) {
                return Err(GpError::InvalidGrid(format!("resolution[{a}] = {}", resolution[a])));
            }
            counts[a] = (extent[a] / resolution[a] + 1e-9).floor() as usize + 1;
        }
        let mut points = Vec::with_capacity(counts[0] * counts[1] * counts[2]);
        for iz in 0..counts[2] {
            for iy in 0..counts[1] {
                for ix in 0..counts[0] {
                    points.push(Vector3::new(
                        origin.x + ix as f64 * resolution.x,
                        origin.y + iy as f64 * resolution.y,
                        origin.z + iz as f64 * resolution.z,
                    ));
                }
            }
        }
        Ok(Self { origin, extent, resolution, counts, points })
    }

    /// Grid from an explicit point list (no lattice structure).
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vector3::zeros();
            hi = Vector3::zeros();
        }
        Self {
            origin: lo,
            extent: hi - lo,
            resolution: Vector3::repeat(1.0),
            counts: [points.len(), 1, 1],
            points,
        }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.extent
    }

    pub fn resolution(&self) -> Vector3<f64> {
        self.resolution
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.counts[1] + iy) * self.counts[0] + ix
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Posterior {
    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance[(i, i)]
    }
}

/// How training inputs enter the kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelMode {
    /// Inputs are taken at their means; covariances ignored.
    Plain,
    /// Kernel averaged over each input's Gaussian position belief.
    Expected(GaussHermiteRule),
}

/// Constant prior mean over the grid.
pub fn prior_mean(grid: &QueryGrid, value: f64) -> DVector<f64> {
    DVector::from_element(grid.len(), value)
}

/// Prior covariance K(X_*, X_*) over the grid.
pub fn prior_covariance(grid: &QueryGrid, spec: &KernelSpec) -> DMatrix<f64> {
    let pts = grid.points();
    let n = pts.len();
    let rows: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|a| pts.iter().map(|b| spec.eval(a, b)).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Plain (mean-only) Gram blocks: `K(X, X)` and `K(X_*, X)`.
pub fn plain_gram(spec: &KernelSpec, train: &TrainingSet, grid: &QueryGrid) -> (DMatrix<f64>, DMatrix<f64>) {
    let xs = train.inputs();
    let n = xs.len();
    let kxx = DMatrix::from_fn(n, n, |i, j| spec.eval(&xs[i].mean, &xs[j].mean));
    let rows: Vec<Vec<f64>> = grid
        .points()
        .par_iter()
        .map(|g| xs.iter().map(|x| spec.eval(g, &x.mean)).collect())
        .collect();
    let ksx = DMatrix::from_fn(grid.len(), n, |i, j| rows[i][j]);
    (kxx, ksx)
}

/// Posterior mean and covariance over the grid.
pub fn gp_predict(
    train: &TrainingSet,
    grid: &QueryGrid,
    spec: &KernelSpec,
    mode: &KernelMode,
    prior_mean_value: f64,
) -> Result<Posterior, GpError> {
    let kss = prior_covariance(grid, spec);
    gp_predict_with_prior(train, grid, spec, mode, prior_mean_value, kss)
}

/// Same as [`gp_predict`] with a precomputed prior covariance `K(X_*, X_*)`.
pub fn gp_predict_with_prior(
    train: &TrainingSet,
    grid: &QueryGrid,
    spec: &KernelSpec,
    mode: &KernelMode,
    prior_mean_value: f64,
    kss: DMatrix<f64>,
) -> Result<Posterior, GpError> {
    spec.hyperparams.validate()?;
    let mut mean = prior_mean(grid, prior_mean_value);
    let mut cov = kss;
    if !train.is_empty() {
        let (kxx, ksx) = match mode {
            KernelMode::Plain => plain_gram(spec, train, grid),
            KernelMode::Expected(rule) => expected_gram(spec, train, grid, rule),
        };
        conditioned(spec, &kxx, &ksx, train.targets(), prior_mean_value, &mut mean, &mut cov)?;
    }
    symmetrize(&mut cov);
    Ok(Posterior { mean, covariance: cov })
}

/// Condition the prior `(mean, cov)` on the Gram blocks in place.
pub(crate) fn conditioned(
    spec: &KernelSpec,
    kxx: &DMatrix<f64>,
    ksx: &DMatrix<f64>,
    targets: &[f64],
    prior_mean_value: f64,
    mean: &mut DVector<f64>,
    cov: &mut DMatrix<f64>,
) -> Result<(), GpError> {
    let n = kxx.nrows();
    let mut a = kxx.clone();
    for i in 0..n {
        a[(i, i)] += spec.hyperparams.noise_variance;
    }
    let (chol, _) = cholesky_with_jitter(&a, spec.signal_variance()).ok_or(GpError::DegenerateGram)?;
    let resid = DVector::from_iterator(n, targets.iter().map(|y| y - prior_mean_value));
    let alpha = chol.solve(&resid);
    *mean += ksx * alpha;
    // V = L^{-1} K(X, X_*); P -= V^T V
    let mut v = ksx.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    cov.gemm_tr(-1.0, &v, &v, 1.0);
    Ok(())
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub restarts: usize,
    pub max_evals_per_start: usize,
    pub seed: u64,
    /// Prior mean subtracted from the targets.
    pub prior_mean: f64,
    /// Log-space search box per parameter (signal variance, length scale, noise variance).
    pub bounds: [(f64, f64); 3],
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_evals_per_start: 400,
            seed: 0,
            prior_mean: 0.0,
            bounds: [(1e-3, 1e3); 3],
        }
    }
}

pub const MIN_TRAINING_SAMPLES: usize = 5;

/// Negative log marginal likelihood of the targets, inputs at their means.
pub fn negative_log_marginal_likelihood(samples: &TrainingSet, spec: &KernelSpec, prior_mean: f64) -> Option<f64> {
    let xs = samples.inputs();
    let n = xs.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| spec.eval(&xs[i].mean, &xs[j].mean));
    for i in 0..n {
        a[(i, i)] += spec.hyperparams.noise_variance;
    }
    let chol = nalgebra::Cholesky::new(a)?;
    let y = DVector::from_iterator(n, samples.targets().iter().map(|t| t - prior_mean));
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let v = 0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    v.is_finite().then_some(v)
}

/// Fit hyperparameters by multi-start simplex search on the negative log
/// marginal likelihood over log-parameters inside `opts.bounds`.
///
/// The first start is the hyperparameters already in `spec`; later starts are
/// drawn uniformly in log-space from a seeded stream, so a run with more
/// restarts explores a superset of a run with fewer.
pub fn train_hyperparams(samples: &TrainingSet, spec: &KernelSpec, opts: &TrainOptions) -> Result<Hyperparams, GpError> {
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(GpError::InsufficientSamples { needed: MIN_TRAINING_SAMPLES, got: samples.len() });
    }
    let lo = DVector::from_iterator(3, opts.bounds.iter().map(|b| b.0.ln()));
    let hi = DVector::from_iterator(3, opts.bounds.iter().map(|b| b.1.ln()));
    let clamp = |x: &DVector<f64>| x.zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
    let objective = |x: &DVector<f64>| {
        let h = Hyperparams::from_log(&clamp(x));
        negative_log_marginal_likelihood(samples, &spec.with_hyperparams(h), opts.prior_mean).unwrap_or(f64::INFINITY)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for restart in 0..opts.restarts.max(1) {
        let x0 = if restart == 0 {
            clamp(&spec.hyperparams.to_log())
        } else {
            DVector::from_fn(3, |i, _| rng.random_range(lo[i]..=hi[i]))
        };
        let res = nelder_mead(objective, &x0, 0.5, opts.max_evals_per_start, 1e-10);
        let x = clamp(&res.x);
        let v = objective(&x);
        if v.is_finite() && best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((x, v));
        }
    }
    best.map(|(x, _)| Hyperparams::from_log(&x)).ok_or(GpError::IllConditioned)
}
