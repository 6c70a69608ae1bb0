//! Incremental prediction of the map covariance trace under hypothetical
//! measurements.
//!
//! With `A = K~(X, X) + s_n^2 I = L L^T` and `W = K~(X_*, X) L^{-T}`, the
//! posterior trace is `Tr K(X_*, X_*) - |W|_F^2`. A new uncertain site `s`
//! extends the factor by `l = L^{-1} k~(X, s)`, `d = sqrt(k~(s, s) + s_n^2 - l.l)`
//! and `W` by the column `w = (k~(X_*, s) - W l) / d`, reducing the trace by
//! `|w|^2`. Target values never enter.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::gp::{KernelMode, KernelSpec, QueryGrid, TrainingSet};
use crate::uncertain::{expected_kernel, expected_kernel_pair, UncertainPoint};

/// Smallest admissible Schur complement, relative to `sigma_f^2`.
const MIN_PIVOT: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MapPredictor {
    spec: KernelSpec,
    mode: KernelMode,
    grid: Arc<QueryGrid>,
    inputs: Vec<UncertainPoint>,
    /// Lower Cholesky factor of the noisy training Gram matrix.
    chol: DMatrix<f64>,
    /// `K~(X_*, X) L^{-T}`
    w: DMatrix<f64>,
    trace: f64,
}

impl MapPredictor {
    /// Predictor at the prior: no training inputs.
    pub fn new(spec: KernelSpec, mode: KernelMode, grid: Arc<QueryGrid>) -> Self {
        let trace = grid.len() as f64 * spec.signal_variance();
        let g = grid.len();
        Self { spec, mode, grid, inputs: Vec::new(), chol: DMatrix::zeros(0, 0), w: DMatrix::zeros(g, 0), trace }
    }

    /// Predictor conditioned on every input of `train`.
    pub fn from_training(spec: KernelSpec, mode: KernelMode, grid: Arc<QueryGrid>, train: &TrainingSet) -> Self {
        let mut p = Self::new(spec, mode, grid);
        for input in train.inputs() {
            p.append(&input.mean, &input.covariance);
        }
        p
    }

    /// Current `Tr(P)`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn point(&self, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> UncertainPoint {
        match self.mode {
            KernelMode::Plain => UncertainPoint::exact(*mean),
            KernelMode::Expected(_) => UncertainPoint::new(*mean, *cov).unwrap_or_else(|_| UncertainPoint::exact(*mean)),
        }
    }

    fn column(&self, site: &UncertainPoint) -> (DVector<f64>, DVector<f64>, f64) {
        let n = self.inputs.len();
        let (kx, kg) = match &self.mode {
            KernelMode::Plain => (
                DVector::from_fn(n, |i, _| self.spec.eval(&self.inputs[i].mean, &site.mean)),
                DVector::from_iterator(self.grid.len(), self.grid.points().iter().map(|g| self.spec.eval(g, &site.mean))),
            ),
            KernelMode::Expected(rule) => (
                DVector::from_fn(n, |i, _| expected_kernel_pair(&self.spec, &self.inputs[i], site, rule)),
                DVector::from_iterator(
                    self.grid.len(),
                    self.grid.points().iter().map(|g| expected_kernel(&self.spec, site, g, rule)),
                ),
            ),
        };
        let mut l = kx;
        if n > 0 {
            self.chol.solve_lower_triangular_mut(&mut l);
        }
        let s2 = self.spec.signal_variance();
        let d2 = (s2 + self.spec.hyperparams.noise_variance - l.norm_squared()).max(MIN_PIVOT * s2);
        let d = d2.sqrt();
        let mut w = kg;
        if n > 0 {
            w.gemv(-1.0, &self.w, &l, 1.0);
        }
        w /= d;
        (l, w, d)
    }

    /// Trace reduction from measuring at a site with position belief
    /// `(mean, cov)`, without changing the predictor.
    pub fn site_reduction(&self, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> f64 {
        let (_, w, _) = self.column(&self.point(mean, cov));
        w.norm_squared()
    }

    /// Condition on a hypothetical measurement; returns the trace reduction.
    pub fn append(&mut self, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> f64 {
        let site = self.point(mean, cov);
        let (l, w, d) = self.column(&site);
        let n = self.inputs.len();
        let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = l[j];
        }
        chol[(n, n)] = d;
        self.chol = chol;
        let reduction = w.norm_squared();
        let g = self.grid.len();
        let mut wm = std::mem::replace(&mut self.w, DMatrix::zeros(0, 0)).resize_horizontally(n + 1, 0.0);
        wm.set_column(n, &w);
        debug_assert_eq!(wm.nrows(), g);
        self.w = wm;
        self.inputs.push(site);
        self.trace -= reduction;
        reduction
    }
}
