//! Gaussian ("standard model") actions and their exact gradients.
//!
//! Every action is a sum of a measurement term, pulling observed components
//! toward data with precision `R_m`, and a model term, penalizing departures
//! from the discrete dynamics with precision `R_f`.

mod ml;
mod standard;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::types::{ObservationSet, TimeGrid};

pub use ml::{action_ml, action_ml_gradient, MlAction, MlBatch, NetworkPath};
pub use standard::{action_standard, action_standard_gradient, StandardAction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown<T> {
    pub total: T,
    pub measurement_term: T,
    pub model_term: T,
    pub rf: T,
    pub rm: T,
}

impl<T: Real> ActionBreakdown<T> {
    pub(crate) fn new(measurement_term: T, model_term: T, rf: T, rm: T) -> Self {
        Self {
            total: measurement_term + model_term,
            measurement_term,
            model_term,
            rf,
            rm,
        }
    }
}

/// A differentiable action over a flat unknown vector (states, then
/// parameters), parameterized by the model precision `R_f`.
///
/// This is what the annealing driver minimizes; implementations must be pure.
pub trait ActionProblem<T: Real>: Sync {
    fn n_vars(&self) -> usize;

    /// Representative measurement precision, used for the level grouping
    /// tolerance `1/√R_m`.
    fn rm(&self) -> T;

    fn evaluate(&self, x: &[T], rf: T) -> ActionBreakdown<T>;

    /// Writes `∂A/∂x` into `grad` (overwriting it) and returns the action.
    fn evaluate_with_gradient(&self, x: &[T], rf: T, grad: &mut [T]) -> ActionBreakdown<T>;

    /// Unknown-parameter part of `x`, reported per β in level tables.
    fn params<'a>(&self, _x: &'a [T]) -> &'a [T] {
        &[]
    }
}

/// Expected value of the measurement term at large `R_f` when `R_m = 1/σ²`
/// matches the noise: each scalar residual contributes `½`.
pub fn expected_measurement_level<T: Real>(obs: &ObservationSet<T>, grid: &TimeGrid<T>) -> T {
    let per_time = (0..obs.n_observed())
        .filter(|&r| obs.rm_for(r) > T::zero())
        .count();
    T::from_usize_lossy(per_time * grid.obs_times().len()) * T::lit(0.5)
}
