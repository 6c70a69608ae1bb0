//! Uncertainty-aware active mapping of scalar fields.
//!
//! A robot with an uncertain position belief maps a scalar field with a
//! Gaussian process whose inputs are Gaussian ([`uncertain`]), predicts its
//! own localization uncertainty with a pose graph ([`slam`]), and plans
//! polynomial trajectories ([`trajectory`]) that maximize a Renyi-entropy
//! information gain discounted by that predicted uncertainty ([`utility`],
//! [`planner`]). [`sim`] provides the synthetic world and metrics.

pub mod cmaes;
pub mod gp;
pub mod numeric;
pub mod planner;
pub mod sim;
pub mod slam;
pub mod trajectory;
pub mod uncertain;
pub mod utility;
