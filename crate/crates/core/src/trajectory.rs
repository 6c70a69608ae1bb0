//! Piecewise-polynomial trajectories through control waypoints.
//!
//! Minimum-snap splines are built per axis by solving the equality-constrained
//! quadratic program (waypoint interpolation, continuity of derivatives 1..4
//! at junctions, zero velocity and acceleration at both ends) through its KKT
//! system. Segment polynomials are stored in normalized time `tau = t / T`.

use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

/// Shortest segment duration in seconds.
pub const MIN_SEGMENT_DURATION: f64 = 0.1;
pub const DEFAULT_ORDER: usize = 12;
/// Highest derivative kept continuous across junctions.
const CONTINUITY_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("degenerate waypoints: {0}")]
    DegenerateWaypoints(String),
    #[error("invalid trajectory parameter: {0}")]
    InvalidParameter(String),
    #[error("minimum-snap system is singular")]
    Singular,
}

/// Ordered control points; the first is the clamped start.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoints(Vec<Vector3<f64>>);

impl Waypoints {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, TrajectoryError> {
        if points.len() < 2 {
            return Err(TrajectoryError::DegenerateWaypoints(format!("need at least 2 waypoints, got {}", points.len())));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(TrajectoryError::DegenerateWaypoints("non-finite coordinate".into()));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Vector3<f64>> {
        self.0
    }
}

/// Which spline family connects the waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryBackend {
    MinimumSnap { order: usize },
    PiecewiseLinear,
}

impl Default for TrajectoryBackend {
    fn default() -> Self {
        TrajectoryBackend::MinimumSnap { order: DEFAULT_ORDER }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    duration: f64,
    /// Per-axis coefficients in normalized time, lowest degree first.
    coeffs: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyTrajectory {
    segments: Vec<Segment>,
    start_times: Vec<f64>,
    total_duration: f64,
}

fn falling_factorial(j: usize, r: usize) -> f64 {
    (0..r).map(|i| (j - i) as f64).product()
}

/// r-th derivative with respect to tau of `sum c_j tau^j`.
fn poly_derivative(c: &[f64], tau: f64, r: usize) -> f64 {
    let mut acc = 0.0;
    for j in (r..c.len()).rev() {
        acc = acc * tau + c[j] * falling_factorial(j, r);
    }
    acc
}

impl PolyTrajectory {
    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    /// Times at which each waypoint is reached.
    pub fn waypoint_times(&self) -> Vec<f64> {
        let mut t = self.start_times.clone();
        t.push(self.total_duration);
        t
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, self.total_duration);
        let idx = match self.start_times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(self.segments.len() - 1);
        let seg = &self.segments[idx];
        (idx, ((t - self.start_times[idx]) / seg.duration).clamp(0.0, 1.0))
    }

    fn eval_segment(&self, idx: usize, tau: f64, r: usize) -> Vector3<f64> {
        let seg = &self.segments[idx];
        let scale = seg.duration.powi(-(r as i32));
        Vector3::from_fn(|a, _| poly_derivative(&seg.coeffs[a], tau, r) * scale)
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.derivative(t, 0)
    }

    /// r-th time derivative at `t` (clamped to the trajectory span).
    pub fn derivative(&self, t: f64, r: usize) -> Vector3<f64> {
        let (idx, tau) = self.locate(t);
        self.eval_segment(idx, tau, r)
    }

    /// Derivative at the end of segment `idx` and at the start of segment
    /// `idx + 1`.
    pub fn junction_derivatives(&self, idx: usize, r: usize) -> (Vector3<f64>, Vector3<f64>) {
        (self.eval_segment(idx, 1.0, r), self.eval_segment(idx + 1, 0.0, r))
    }

    /// Same geometric path traversed with every duration multiplied by `factor`.
    pub fn time_scaled(&self, factor: f64) -> Self {
        let segments: Vec<Segment> = self
            .segments
            .iter()
            .map(|s| Segment { duration: s.duration * factor, coeffs: s.coeffs.clone() })
            .collect();
        Self::from_segments(segments)
    }

    /// This trajectory followed by `other`.
    pub fn concat(&self, other: &PolyTrajectory) -> Self {
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        Self::from_segments(segments)
    }

    fn from_segments(segments: Vec<Segment>) -> Self {
        let mut start_times = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for s in &segments {
            start_times.push(t);
            t += s.duration;
        }
        Self { segments, start_times, total_duration: t }
    }
}

/// Trapezoidal-speed duration for a rest-to-rest move of `distance`,
/// floored at [`MIN_SEGMENT_DURATION`].
pub fn segment_duration(distance: f64, v_ref: f64, a_ref: f64) -> f64 {
    let t = if distance >= v_ref * v_ref / a_ref {
        distance / v_ref + v_ref / a_ref
    } else {
        2.0 * (distance / a_ref).sqrt()
    };
    t.max(MIN_SEGMENT_DURATION)
}

fn check_refs(v_ref: f64, a_ref: f64) -> Result<(), TrajectoryError> {
    if !(v_ref.is_finite() && v_ref > 0.0 && a_ref.is_finite() && a_ref > 0.0) {
        return Err(TrajectoryError::InvalidParameter(format!("v_ref = {v_ref}, a_ref = {a_ref}")));
    }
    Ok(())
}

fn durations(wp: &Waypoints, v_ref: f64, a_ref: f64) -> Vec<f64> {
    wp.points().windows(2).map(|w| segment_duration((w[1] - w[0]).norm(), v_ref, a_ref)).collect()
}

/// Minimum-snap trajectory of polynomial `order` through the waypoints.
pub fn fit_trajectory(wp: &Waypoints, v_ref: f64, a_ref: f64, order: usize) -> Result<PolyTrajectory, TrajectoryError> {
    check_refs(v_ref, a_ref)?;
    if order < 5 {
        return Err(TrajectoryError::InvalidParameter(format!("polynomial order {order} < 5")));
    }
    let durs = durations(wp, v_ref, a_ref);
    let m = durs.len();
    let nc = order + 1;
    let nvar = m * nc;

    // Cost: sum_s T_s^{-7} * H, scaled so the largest block is O(1).
    let max_w = durs.iter().map(|t| t.powi(-7)).fold(0.0f64, f64::max);
    let mut q = DMatrix::zeros(nvar, nvar);
    for (s, t) in durs.iter().enumerate() {
        let w = t.powi(-7) / max_w;
        for i in 4..nc {
            for j in 4..nc {
                q[(s * nc + i, s * nc + j)] =
                    w * falling_factorial(i, 4) * falling_factorial(j, 4) / (i + j - 7) as f64;
            }
        }
    }

    // Equality constraints; RHS columns are the three axes.
    let mut rows: Vec<(Vec<(usize, f64)>, [f64; 3])> = Vec::new();
    let pts = wp.points();
    let value_row = |s: usize, tau: f64, r: usize, scale: f64| -> Vec<(usize, f64)> {
        (r..nc)
            .map(|j| (s * nc + j, scale * falling_factorial(j, r) * if tau == 0.0 { if j == r { 1.0 } else { 0.0 } } else { 1.0 }))
            .filter(|(_, v)| *v != 0.0)
            .collect()
    };
    for s in 0..m {
        rows.push((value_row(s, 0.0, 0, 1.0), pts[s].into()));
        rows.push((value_row(s, 1.0, 0, 1.0), pts[s + 1].into()));
    }
    for s in 0..m.saturating_sub(1) {
        for r in 1..=CONTINUITY_ORDER {
            // scaled by the shorter duration^r to keep rows comparable
            let base = durs[s].min(durs[s + 1]);
            let mut row = value_row(s, 1.0, r, (base / durs[s]).powi(r as i32));
            row.extend(value_row(s + 1, 0.0, r, -(base / durs[s + 1]).powi(r as i32)));
            rows.push((row, [0.0; 3]));
        }
    }
    for r in 1..=2 {
        rows.push((value_row(0, 0.0, r, 1.0), [0.0; 3]));
        rows.push((value_row(m - 1, 1.0, r, 1.0), [0.0; 3]));
    }

    let nc_rows = rows.len();
    let dim = nvar + nc_rows;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (nvar, nvar)).copy_from(&(&q * 2.0));
    let mut rhs = DMatrix::zeros(dim, 3);
    for (k, (row, b)) in rows.iter().enumerate() {
        for &(j, v) in row {
            kkt[(nvar + k, j)] = v;
            kkt[(j, nvar + k)] = v;
        }
        for a in 0..3 {
            rhs[(nvar + k, a)] = b[a];
        }
    }
    let sol = kkt.full_piv_lu().solve(&rhs).ok_or(TrajectoryError::Singular)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(TrajectoryError::Singular);
    }

    let segments = durs
        .iter()
        .enumerate()
        .map(|(s, &duration)| Segment {
            duration,
            coeffs: std::array::from_fn(|a| (0..nc).map(|j| sol[(s * nc + j, a)]).collect()),
        })
        .collect();
    Ok(PolyTrajectory::from_segments(segments))
}

/// Straight segments between waypoints with the same time allocation.
pub fn fit_piecewise_linear(wp: &Waypoints, v_ref: f64, a_ref: f64) -> Result<PolyTrajectory, TrajectoryError> {
    check_refs(v_ref, a_ref)?;
    let durs = durations(wp, v_ref, a_ref);
    let segments = wp
        .points()
        .windows(2)
        .zip(durs)
        .map(|(w, duration)| Segment { duration, coeffs: std::array::from_fn(|a| vec![w[0][a], w[1][a] - w[0][a]]) })
        .collect();
    Ok(PolyTrajectory::from_segments(segments))
}

/// Fit with the selected backend.
pub fn build_trajectory(wp: &Waypoints, backend: TrajectoryBackend, v_ref: f64, a_ref: f64) -> Result<PolyTrajectory, TrajectoryError> {
    match backend {
        TrajectoryBackend::MinimumSnap { order } => fit_trajectory(wp, v_ref, a_ref, order),
        TrajectoryBackend::PiecewiseLinear => fit_piecewise_linear(wp, v_ref, a_ref),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSites {
    pub times: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl MeasurementSites {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Measurement sites at `t0, t0 + 1/rate, ...` up to the trajectory end.
pub fn sample_sites(traj: &PolyTrajectory, sensor_rate: f64, t0: f64) -> MeasurementSites {
    assert!(sensor_rate > 0.0, "sensor rate must be positive");
    let dt = 1.0 / sensor_rate;
    let mut sites = MeasurementSites::default();
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * dt;
        if t > traj.total_duration() + 1e-9 {
            break;
        }
        sites.times.push(t);
        sites.positions.push(traj.position(t));
        k += 1;
    }
    sites
}

/// Time cost of executing the trajectory.
pub fn trajectory_cost(traj: &PolyTrajectory) -> f64 {
    traj.total_duration()
}
