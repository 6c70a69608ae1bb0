//! Information objectives for ranking candidate plans.

use thiserror::Error;

/// Floor on the aggregated pose trace; caps alpha at `1 + 1e12`.
pub const MIN_POSE_TRACE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("covariance trace must be positive, got {0}")]
    NonPositiveTrace(f64),
    #[error("invalid prediction bundle: {0}")]
    InvalidBundle(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityKind {
    /// Map entropy reduction discounted by predicted localization quality.
    RenyiCoupled,
    ShannonOnly,
    /// Shannon reduction per second of travel.
    UncertaintyRate,
    /// Normalized map and pose reductions, each divided by its upper bound.
    WeightedLinear { w_map: f64, w_pose: f64, map_bound: f64, pose_bound: f64 },
}

impl UtilityKind {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityKind::RenyiCoupled => "renyi",
            UtilityKind::ShannonOnly => "shannon",
            UtilityKind::UncertaintyRate => "rate",
            UtilityKind::WeightedLinear { .. } => "linear",
        }
    }
}

/// Predicted consequences of executing one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    /// `Tr(P-)` before the candidate's measurements.
    pub prior_trace: f64,
    /// `Tr(P+)` after them.
    pub posterior_trace: f64,
    /// `Tr(Sigma_k)` at each predicted measurement site.
    pub pose_traces: Vec<f64>,
    /// Seconds.
    pub duration: f64,
}

impl PredictionBundle {
    pub fn validate(&self) -> Result<(), UtilityError> {
        for t in [self.prior_trace, self.posterior_trace] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(UtilityError::NonPositiveTrace(t));
            }
        }
        if self.pose_traces.is_empty() {
            return Err(UtilityError::InvalidBundle("no pose traces".into()));
        }
        if self.pose_traces.iter().any(|t| !(*t >= 0.0)) {
            return Err(UtilityError::InvalidBundle("negative or NaN pose trace".into()));
        }
        if !(self.duration > 0.0) {
            return Err(UtilityError::InvalidBundle(format!("duration {}", self.duration)));
        }
        Ok(())
    }
}

/// `1 + 1 / mean(pose_traces)`, with the mean floored at [`MIN_POSE_TRACE`].
pub fn alpha_from_sigma(pose_traces: &[f64]) -> f64 {
    let mean = if pose_traces.is_empty() {
        0.0
    } else {
        pose_traces.iter().sum::<f64>() / pose_traces.len() as f64
    };
    1.0 + 1.0 / mean.max(MIN_POSE_TRACE)
}

/// `log(alpha^{1/(alpha-1)})`, continuous at the Shannon limit `alpha -> 1`.
fn log_limit_factor(alpha: f64) -> f64 {
    let d = alpha - 1.0;
    if d < 1e-8 {
        1.0 - d / 2.0 + d * d / 3.0
    } else {
        d.ln_1p() / d
    }
}

/// Trace-approximated Renyi entropy `log(tr * alpha^{1/(alpha-1)})`.
pub fn renyi_entropy_trace(trace: f64, alpha: f64) -> Result<f64, UtilityError> {
    if !(trace > 0.0) {
        return Err(UtilityError::NonPositiveTrace(trace));
    }
    Ok(trace.ln() + log_limit_factor(alpha))
}

pub fn info_gain_renyi(bundle: &PredictionBundle) -> Result<f64, UtilityError> {
    bundle.validate()?;
    let alpha = alpha_from_sigma(&bundle.pose_traces);
    Ok(bundle.prior_trace.ln() + 1.0 - renyi_entropy_trace(bundle.posterior_trace, alpha)?)
}

fn shannon_gain(bundle: &PredictionBundle) -> f64 {
    (bundle.prior_trace.ln() + 1.0) - (bundle.posterior_trace.ln() + 1.0)
}

/// Score of a candidate under `kind`; larger is better.
pub fn utility_evaluate(kind: &UtilityKind, bundle: &PredictionBundle) -> Result<f64, UtilityError> {
    bundle.validate()?;
    match *kind {
        UtilityKind::RenyiCoupled => info_gain_renyi(bundle),
        UtilityKind::ShannonOnly => Ok(shannon_gain(bundle)),
        UtilityKind::UncertaintyRate => Ok(shannon_gain(bundle) / bundle.duration),
        UtilityKind::WeightedLinear { w_map, w_pose, map_bound, pose_bound } => {
            if !(w_map >= 0.0 && w_pose >= 0.0 && map_bound > 0.0 && pose_bound > 0.0) {
                return Err(UtilityError::InvalidBundle("weighted-linear weights or bounds".into()));
            }
            let mean_pose = bundle.pose_traces.iter().sum::<f64>() / bundle.pose_traces.len() as f64;
            let map_term = (bundle.prior_trace - bundle.posterior_trace) / map_bound;
            let pose_term = (pose_bound - mean_pose) / pose_bound;
            Ok(w_map * map_term + w_pose * pose_term)
        }
    }
}
