//! Small dense linear-algebra and optimization helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// First jitter tried, relative to the matrix scale.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up, relative to the matrix scale.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factorization that retries with a growing diagonal jitter.
///
/// The unmodified matrix is tried first. On failure `lambda * I` is added with
/// `lambda = JITTER_START * scale`, growing by 10x up to `JITTER_MAX * scale`.
/// Returns the factor and the jitter that was finally applied (0 if none).
pub fn cholesky_with_jitter(a: &DMatrix<f64>, scale: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Some((chol, 0.0));
    }
    let mut lambda = JITTER_START * scale;
    while lambda <= JITTER_MAX * scale * (1.0 + 1e-9) {
        let mut shifted = a.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += lambda;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Some((chol, lambda));
        }
        lambda *= 10.0;
    }
    None
}

/// Replace `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Result of a [`nelder_mead`] run.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Derivative-free Nelder-Mead minimization with standard coefficients.
///
/// Non-finite objective values are treated as `+inf`, so the simplex walks
/// away from regions where `f` cannot be evaluated.
pub fn nelder_mead<F>(mut f: F, x0: &DVector<f64>, step: f64, max_evals: usize, tol: f64) -> SimplexResult
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= tol * (1.0 + best.abs()) && best.is_finite() {
            break;
        }

        let mut centroid = DVector::zeros(n);
        for (x, _) in &simplex[..n] {
            centroid += x;
        }
        centroid /= n as f64;

        let reflected = &centroid + (&centroid - &simplex[n].0);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded = &centroid + 2.0 * (&reflected - &centroid);
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[n].1 {
            let c = &centroid + 0.5 * (&reflected - &centroid);
            let v = eval(&c, &mut evals);
            (c, v)
        } else {
            let c = &centroid + 0.5 * (&simplex[n].0 - &centroid);
            let v = eval(&c, &mut evals);
            (c, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        // shrink toward the best vertex
        let best_x = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let x = &best_x + 0.5 * (&entry.0 - &best_x);
            let v = eval(&x, &mut evals);
            *entry = (x, v);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult { x, value, evaluations: evals }
}
