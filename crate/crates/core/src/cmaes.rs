//! Covariance matrix adaptation evolution strategy.
//!
//! Standard `(mu/mu_w, lambda)` CMA-ES with cumulative step-size adaptation
//! and rank-one plus rank-mu covariance updates. Box constraints are handled
//! by evaluating the objective at the clamped point and adding a quadratic
//! penalty on the distance to the box. The best evaluated point, which always
//! includes `x0`, is returned.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesOptions {
    /// Population size; `None` uses `4 + floor(3 ln n)`.
    pub population: Option<usize>,
    pub max_evaluations: usize,
    pub seed: u64,
    /// Per-coordinate `(lower, upper)` bounds.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub penalty_weight: f64,
    /// Stop once `sigma * sqrt(max diag C)` falls below this.
    pub tol_x: f64,
    /// Stop once the best value reaches this.
    pub target: Option<f64>,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        Self {
            population: None,
            max_evaluations: 2000,
            seed: 0,
            bounds: None,
            penalty_weight: 1e3,
            tol_x: 1e-12,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub generations: usize,
}

pub fn default_population(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

fn clamp_to(x: &DVector<f64>, bounds: &Option<Vec<(f64, f64)>>) -> (DVector<f64>, f64) {
    match bounds {
        None => (x.clone(), 0.0),
        Some(b) => {
            let mut c = x.clone();
            let mut d2 = 0.0;
            for (i, (lo, hi)) in b.iter().enumerate() {
                let v = x[i].clamp(*lo, *hi);
                d2 += (x[i] - v).powi(2);
                c[i] = v;
            }
            (c, d2)
        }
    }
}

/// Minimize `f` from `x0` with initial step `sigma0`.
///
/// `x0` is evaluated first and counts against the budget. Generations are
/// evaluated in parallel and reduced in sample order, so results depend only
/// on the seed.
pub fn cmaes_minimize<F>(f: F, x0: &DVector<f64>, sigma0: f64, opts: &CmaesOptions) -> CmaesResult
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let n = x0.len();
    assert!(n >= 1, "cmaes_minimize needs at least one dimension");
    let sanitize = |v: f64| if v.is_nan() { f64::INFINITY } else { v };

    let (x0c, _) = clamp_to(x0, &opts.bounds);
    let mut best_x = x0c.clone();
    let mut best_f = sanitize(f(&x0c));
    let mut evals = 1usize;
    let mut generations = 0usize;
    let done = |best: f64| opts.target.is_some_and(|t| best <= t);
    if opts.max_evaluations <= 1 || sigma0 <= 0.0 || done(best_f) {
        return CmaesResult { x: best_x, value: best_f, evaluations: evals, generations };
    }

    let lambda = opts.population.unwrap_or_else(|| default_population(n)).max(2);
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let nf = n as f64;

    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mean = x0c;
    let mut sigma = sigma0;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    while evals + lambda <= opts.max_evaluations {
        let eig = SymmetricEigen::new(c.clone());
        let d: DVector<f64> = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
        let b = eig.eigenvectors;
        let bd = &b * DMatrix::from_diagonal(&d);
        let inv_sqrt_c = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();

        let ys: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &bd * z
            })
            .collect();
        let xs: Vec<DVector<f64>> = ys.iter().map(|y| &mean + y * sigma).collect();
        let scored: Vec<(DVector<f64>, f64, f64)> = xs
            .par_iter()
            .map(|x| {
                let (xc, d2) = clamp_to(x, &opts.bounds);
                let v = sanitize(f(&xc));
                (xc, v, v + opts.penalty_weight * d2)
            })
            .collect();
        evals += lambda;
        generations += 1;
        for (xc, v, _) in &scored {
            if *v < best_f {
                best_f = *v;
                best_x = xc.clone();
            }
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| scored[i].2.total_cmp(&scored[j].2).then(i.cmp(&j)));

        let old_mean = mean.clone();
        mean = DVector::zeros(n);
        for (w, &i) in weights.iter().zip(&order) {
            mean += &xs[i] * *w;
        }
        let y_w = (&mean - &old_mean) / sigma;

        ps = &ps * (1.0 - cs) + &inv_sqrt_c * &y_w * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let denom = (1.0 - (1.0 - cs).powi(2 * generations as i32)).sqrt();
        let hsig = ps_norm / denom / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &i) in weights.iter().zip(&order) {
            rank_mu += &ys[i] * ys[i].transpose() * *w;
        }
        c = &c * (1.0 - c1 - cmu + (1.0 - h) * c1 * cc * (2.0 - cc)) + &pc * pc.transpose() * c1 + rank_mu * cmu;
        c = (&c + c.transpose()) * 0.5;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).min(1.0).exp();

        let spread = sigma * c.diagonal().max().sqrt();
        if done(best_f) || !spread.is_finite() || spread < opts.tol_x {
            break;
        }
    }

    CmaesResult { x: best_x, value: best_f, evaluations: evals, generations }
}
