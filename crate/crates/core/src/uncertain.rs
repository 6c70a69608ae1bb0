//! Expected kernels under Gaussian input uncertainty.
//!
//! A position belief `x ~ N(p, S)` enters the field model through
//! `E[k(x, x')]`, evaluated with a tensor-product Gauss-Hermite rule after the
//! change of variables `x = p + sqrt(2) L u`, `L L^T = S`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::gp::{GpError, KernelSpec, ObservedInput, QueryGrid, TrainingSet};

pub const MAX_ORDER: usize = 20;
/// Diagonal regularization applied when a covariance is not Cholesky-factorizable.
pub const SINGULAR_REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("Gauss-Hermite order {0} unsupported (1..={MAX_ORDER})")]
    UnsupportedOrder(usize),
    #[error("position covariance is not positive semidefinite")]
    InvalidCovariance,
}

/// Physicists' Gauss-Hermite rule for the weight `exp(-u^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// 3-D tensor product in standard-normal coordinates: (sqrt(2) u, prod w / pi^{3/2}).
    tensor: Vec<(Vector3<f64>, f64)>,
}

impl GaussHermiteRule {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Raw weights; they sum to sqrt(pi).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights divided by sqrt(pi); they sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / PI.sqrt()).collect()
    }

    /// Tensor-product nodes for a standard normal in 3-D with their weights.
    pub fn tensor3(&self) -> &[(Vector3<f64>, f64)] {
        &self.tensor
    }
}

/// Nodes and weights via the Golub-Welsch eigenproblem, polished by Newton
/// iterations on the orthonormal Hermite recurrence and made exactly symmetric.
pub fn gauss_hermite_rule(order: usize) -> Result<GaussHermiteRule, QuadratureError> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::UnsupportedOrder(order));
    }
    let n = order;
    let mut nodes: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        jacobi.symmetric_eigenvalues().iter().copied().collect()
    };
    nodes.sort_by(f64::total_cmp);

    let mut weights = vec![0.0; n];
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..100 {
            let (p, dp) = hermite_orthonormal(n, *x);
            let dx = p / dp;
            *x -= dx;
            if dx.abs() < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let (_, dp) = hermite_orthonormal(n, *x);
        *w = 2.0 / (dp * dp);
    }

    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let norm: Vec<f64> = weights.iter().map(|w| w / PI.sqrt()).collect();
    let mut tensor = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let z = Vector3::new(nodes[i], nodes[j], nodes[k]) * 2f64.sqrt();
                tensor.push((z, norm[i] * norm[j] * norm[k]));
            }
        }
    }
    Ok(GaussHermiteRule { order, nodes, weights, tensor })
}

/// Orthonormal Hermite function value and derivative at `x`: returns
/// (p_n(x), p_n'(x)) with p_n = H_n / sqrt(2^n n! sqrt(pi)).
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        p1 = x * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// A Gaussian position belief with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainPoint {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub cholesky: Matrix3<f64>,
}

impl UncertainPoint {
    pub fn new(mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self, QuadratureError> {
        let cholesky = regularized_cholesky(&covariance).ok_or(QuadratureError::InvalidCovariance)?;
        Ok(Self { mean, covariance, cholesky })
    }

    pub fn exact(mean: Vector3<f64>) -> Self {
        Self { mean, covariance: Matrix3::zeros(), cholesky: Matrix3::zeros() }
    }

    pub fn from_input(input: &ObservedInput) -> Result<Self, QuadratureError> {
        Self::new(input.mean, input.covariance)
    }
}

/// Lower Cholesky factor of `s`, retrying with `s + 1e-12 I` when singular.
pub fn regularized_cholesky(s: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if s.iter().all(|v| *v == 0.0) {
        return Some(Matrix3::zeros());
    }
    if let Some(c) = s.cholesky() {
        return Some(c.unpack());
    }
    (s + Matrix3::identity() * SINGULAR_REGULARIZATION).cholesky().map(|c| c.unpack())
}

/// `E[k(x, query)]` for `x ~ N(a.mean, a.covariance)`.
pub fn expected_kernel(spec: &KernelSpec, a: &UncertainPoint, query: &Vector3<f64>, rule: &GaussHermiteRule) -> f64 {
    expected_kernel_offset(spec, &(a.mean - query), &a.cholesky, rule)
}

/// `E[kappa(|mu + L z|^2)]` with `z` standard normal: the expected kernel for a
/// Gaussian lag with mean `mu` and covariance `L L^T`.
#[inline]
pub fn expected_kernel_offset(spec: &KernelSpec, mu: &Vector3<f64>, l: &Matrix3<f64>, rule: &GaussHermiteRule) -> f64 {
    rule.tensor3()
        .iter()
        .map(|(z, w)| w * spec.eval_sq_dist((mu + l * z).norm_squared()))
        .sum()
}

/// `E[k(x_a, x_b)]` for independent Gaussian inputs.
///
/// For a stationary kernel the value depends on `x_a - x_b` only, which is
/// Gaussian with mean `p_a - p_b` and covariance `S_a + S_b`; the double
/// expectation is evaluated as one 3-D rule over that lag. Passing the same
/// object twice returns `sigma_f^2`.
pub fn expected_kernel_pair(spec: &KernelSpec, a: &UncertainPoint, b: &UncertainPoint, rule: &GaussHermiteRule) -> f64 {
    if std::ptr::eq(a, b) {
        return spec.signal_variance();
    }
    let s = a.covariance + b.covariance;
    let l = regularized_cholesky(&s).unwrap_or_else(|| a.cholesky + b.cholesky);
    expected_kernel_offset(spec, &(a.mean - b.mean), &l, rule)
}

fn uncertain_points(train: &TrainingSet) -> Vec<UncertainPoint> {
    train
        .inputs()
        .iter()
        .map(|i| UncertainPoint::from_input(i).unwrap_or_else(|_| UncertainPoint::exact(i.mean)))
        .collect()
}

/// Expected Gram blocks `K~(X, X)` and `K~(X_*, X)`.
pub fn expected_gram(
    spec: &KernelSpec,
    train: &TrainingSet,
    grid: &QueryGrid,
    rule: &GaussHermiteRule,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let pts = uncertain_points(train);
    let n = pts.len();
    let mut kxx = DMatrix::zeros(n, n);
    for i in 0..n {
        kxx[(i, i)] = spec.signal_variance();
        for j in 0..i {
            let v = expected_kernel_pair(spec, &pts[i], &pts[j], rule);
            kxx[(i, j)] = v;
            kxx[(j, i)] = v;
        }
    }
    let ksx = cross_block(spec, &pts, grid.points(), rule);
    (kxx, ksx)
}

fn cross_block(spec: &KernelSpec, pts: &[UncertainPoint], queries: &[Vector3<f64>], rule: &GaussHermiteRule) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|g| pts.iter().map(|p| expected_kernel(spec, p, g, rule)).collect())
        .collect();
    DMatrix::from_fn(queries.len(), pts.len(), |i, j| rows[i][j])
}

/// Incrementally maintained expected Gram blocks for a growing training set.
///
/// Entries for the longest common prefix of inputs are reused; only rows and
/// columns of new inputs are evaluated.
#[derive(Debug, Clone)]
pub struct ExpectedGramCache {
    spec: KernelSpec,
    rule: GaussHermiteRule,
    inputs: Vec<ObservedInput>,
    points: Vec<UncertainPoint>,
    kxx: DMatrix<f64>,
    ksx: DMatrix<f64>,
    grid_len: usize,
}

impl ExpectedGramCache {
    pub fn new(spec: KernelSpec, rule: GaussHermiteRule) -> Self {
        Self {
            spec,
            rule,
            inputs: Vec::new(),
            points: Vec::new(),
            kxx: DMatrix::zeros(0, 0),
            ksx: DMatrix::zeros(0, 0),
            grid_len: 0,
        }
    }

    pub fn update(&mut self, train: &TrainingSet, grid: &QueryGrid) -> Result<(&DMatrix<f64>, &DMatrix<f64>), GpError> {
        if self.grid_len != grid.len() {
            self.inputs.clear();
            self.points.clear();
            self.grid_len = grid.len();
        }
        let keep = self.inputs.iter().zip(train.inputs()).take_while(|(a, b)| a == b).count();
        self.inputs.truncate(keep);
        self.points.truncate(keep);
        for input in &train.inputs()[keep..] {
            let p = UncertainPoint::from_input(input).map_err(|_| GpError::InvalidCovariance)?;
            self.inputs.push(input.clone());
            self.points.push(p);
        }
        let n = self.points.len();
        let mut kxx = DMatrix::zeros(n, n);
        if keep > 0 {
            kxx.view_mut((0, 0), (keep, keep)).copy_from(&self.kxx.view((0, 0), (keep, keep)));
        }
        for i in keep..n {
            kxx[(i, i)] = self.spec.signal_variance();
            for j in 0..i {
                let v = expected_kernel_pair(&self.spec, &self.points[i], &self.points[j], &self.rule);
                kxx[(i, j)] = v;
                kxx[(j, i)] = v;
            }
        }
        let mut ksx = DMatrix::zeros(grid.len(), n);
        if keep > 0 {
            ksx.columns_mut(0, keep).copy_from(&self.ksx.columns(0, keep));
        }
        if n > keep {
            let fresh = cross_block(&self.spec, &self.points[keep..], grid.points(), &self.rule);
            ksx.columns_mut(keep, n - keep).copy_from(&fresh);
        }
        self.kxx = kxx;
        self.ksx = ksx;
        Ok((&self.kxx, &self.ksx))
    }
}
