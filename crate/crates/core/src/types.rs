//! Domain types shared by every module: the time grid, the path over which
//! the action is minimized, observation sets, the annealing schedule and the
//! action-level table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};

/// Relative tolerance used when snapping times onto grid slots.
const SNAP_TOL: f64 = 1e-6;

/// Discretization of the assimilation window `[t0, tF]`.
///
/// Time is carried as an integer slot index `n` with `t_n = t0 + n·dt_model`.
/// Observation times snap onto slots; consecutive observations are separated
/// by exactly `steps_between_obs + 1` model steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + serde::de::DeserializeOwned"))]
#[serde(try_from = "RawTimeGrid<T>", into = "RawTimeGrid<T>")]
pub struct TimeGrid<T: Real> {
    t0: T,
    tf: T,
    dt_model: T,
    obs_times: Vec<T>,
    steps_between_obs: usize,
    n_steps: usize,
    obs_slots: Vec<usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawTimeGrid<T> {
    t0: T,
    tf: T,
    dt_model: T,
    obs_times: Vec<T>,
    steps_between_obs: usize,
}

impl<T: Real> TryFrom<RawTimeGrid<T>> for TimeGrid<T> {
    type Error = Error;
    fn try_from(r: RawTimeGrid<T>) -> Result<Self> {
        TimeGrid::new(r.t0, r.tf, r.dt_model, r.obs_times, r.steps_between_obs)
    }
}

impl<T: Real> From<TimeGrid<T>> for RawTimeGrid<T> {
    fn from(g: TimeGrid<T>) -> Self {
        RawTimeGrid {
            t0: g.t0,
            tf: g.tf,
            dt_model: g.dt_model,
            obs_times: g.obs_times,
            steps_between_obs: g.steps_between_obs,
        }
    }
}

fn snap<T: Real>(offset: T, dt: T, field: &'static str) -> Result<usize> {
    let k = offset / dt;
    let n = k.round();
    if (k - n).abs() > T::lit(SNAP_TOL) * (T::one() + n.abs()) || n < T::zero() {
        return Err(Error::invalid(
            field,
            format!("{} is not a whole number of model steps", offset),
        ));
    }
    Ok(n.to_usize().unwrap_or(0))
}

impl<T: Real> TimeGrid<T> {
    pub fn new(
        t0: T,
        tf: T,
        dt_model: T,
        obs_times: Vec<T>,
        steps_between_obs: usize,
    ) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite() && t0 < tf) {
            return Err(Error::invalid("grid.tf", "t0 must be strictly less than tF"));
        }
        if !(dt_model > T::zero() && dt_model.is_finite()) {
            return Err(Error::invalid("grid.dt_model", "time step must be positive"));
        }
        if obs_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(
                "grid.obs_times",
                "observation times must be strictly increasing",
            ));
        }
        let eps = T::lit(SNAP_TOL) * dt_model;
        if obs_times.iter().any(|&t| t < t0 - eps || t > tf + eps) {
            return Err(Error::invalid(
                "grid.obs_times",
                "observation times must lie within [t0, tF]",
            ));
        }
        let n_steps = snap(tf - t0, dt_model, "grid.dt_model")?;
        let obs_slots = obs_times
            .iter()
            .map(|&t| snap(t - t0, dt_model, "grid.obs_times"))
            .collect::<Result<Vec<_>>>()?;
        if obs_slots.windows(2).any(|w| w[1] - w[0] != steps_between_obs + 1) {
            return Err(Error::invalid(
                "grid.steps_between_obs",
                format!(
                    "consecutive observations must be {} model steps apart",
                    steps_between_obs + 1
                ),
            ));
        }
        Ok(Self {
            t0,
            tf,
            dt_model,
            obs_times,
            steps_between_obs,
            n_steps,
            obs_slots,
        })
    }

    /// `n_obs` observations every `dt_obs` starting at `t0`, with
    /// `steps_between_obs` extra model steps inside each interval. The window
    /// ends at the last observation.
    pub fn regular(t0: T, dt_obs: T, n_obs: usize, steps_between_obs: usize) -> Result<Self> {
        if n_obs < 2 {
            return Err(Error::invalid("grid.n_obs", "need at least two observation times"));
        }
        let obs_times: Vec<T> = (0..n_obs)
            .map(|s| t0 + T::from_usize_lossy(s) * dt_obs)
            .collect();
        let tf = obs_times[n_obs - 1];
        let dt_model = dt_obs / T::from_usize_lossy(steps_between_obs + 1);
        Self::new(t0, tf, dt_model, obs_times, steps_between_obs)
    }

    /// A grid of `n_steps` model steps with no observations.
    pub fn unobserved(t0: T, dt_model: T, n_steps: usize) -> Result<Self> {
        let tf = t0 + T::from_usize_lossy(n_steps) * dt_model;
        if n_steps == 0 {
            return Err(Error::invalid("grid.n_steps", "need at least one model step"));
        }
        Self::new(t0, tf, dt_model, Vec::new(), 0)
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn tf(&self) -> T {
        self.tf
    }

    pub fn dt_model(&self) -> T {
        self.dt_model
    }

    pub fn obs_times(&self) -> &[T] {
        &self.obs_times
    }

    pub fn steps_between_obs(&self) -> usize {
        self.steps_between_obs
    }

    /// Number of model steps `T`; the grid has `T + 1` state slots.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_slots(&self) -> usize {
        self.n_steps + 1
    }

    /// Slot index of each observation time.
    pub fn obs_slots(&self) -> &[usize] {
        &self.obs_slots
    }

    pub fn time(&self, slot: usize) -> T {
        self.t0 + T::from_usize_lossy(slot) * self.dt_model
    }
}

/// The unknowns of an assimilation problem: every state at every slot plus
/// the unknown model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path<T> {
    dim: usize,
    states: Vec<T>,
    params: Vec<T>,
}

impl<T: Real> Path<T> {
    pub fn zeros(n_slots: usize, dim: usize, n_params: usize) -> Self {
        Self {
            dim,
            states: vec![T::zero(); n_slots * dim],
            params: vec![T::zero(); n_params],
        }
    }

    /// Builds a path from row-major states `[slot][component]`.
    pub fn from_parts(dim: usize, states: Vec<T>, params: Vec<T>) -> Result<Self> {
        if dim == 0 || !states.len().is_multiple_of(dim) || states.is_empty() {
            return Err(Error::Dimension {
                context: "path states",
                expected: dim,
                actual: states.len(),
            });
        }
        if !all_finite(&states) || !all_finite(&params) {
            return Err(Error::NonFinite("path entries"));
        }
        Ok(Self { dim, states, params })
    }

    /// Inverse of [`Path::to_vector`].
    pub fn from_vector(x: &[T], n_slots: usize, dim: usize) -> Result<Self> {
        let n = n_slots * dim;
        if x.len() < n {
            return Err(Error::Dimension {
                context: "path vector",
                expected: n,
                actual: x.len(),
            });
        }
        Ok(Self {
            dim,
            states: x[..n].to_vec(),
            params: x[n..].to_vec(),
        })
    }

    /// States followed by parameters, the layout used by every gradient.
    pub fn to_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.states.len() + self.params.len());
        v.extend_from_slice(&self.states);
        v.extend_from_slice(&self.params);
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_slots(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn state(&self, slot: usize) -> &[T] {
        &self.states[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn state_mut(&mut self, slot: usize) -> &mut [T] {
        &mut self.states[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.states) && all_finite(&self.params)
    }

    /// Keeps every `stride`-th slot. Used to move a truth trajectory from a
    /// fine generation grid onto a coarser assimilation grid.
    pub fn subsample(&self, stride: usize) -> Self {
        assert!(stride >= 1);
        let states = (0..self.n_slots())
            .step_by(stride)
            .flat_map(|n| self.state(n).iter().copied())
            .collect();
        Self {
            dim: self.dim,
            states,
            params: self.params.clone(),
        }
    }
}

/// Noisy observations `y_r(τ_s)` of selected state components.
///
/// `rm` is the measurement precision `R_m`; `rm_diag` optionally overrides it
/// per observed component. `R_m = 0` means no measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet<T> {
    /// Row-major `[S][L]`.
    pub values: Vec<T>,
    pub observed_indices: Vec<usize>,
    pub rm: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm_diag: Option<Vec<T>>,
}

impl<T: Real> ObservationSet<T> {
    pub fn new(values: Vec<T>, observed_indices: Vec<usize>, rm: T) -> Self {
        Self {
            values,
            observed_indices,
            rm,
            rm_diag: None,
        }
    }

    pub fn n_observed(&self) -> usize {
        self.observed_indices.len()
    }

    pub fn n_times(&self) -> usize {
        if self.observed_indices.is_empty() {
            0
        } else {
            self.values.len() / self.observed_indices.len()
        }
    }

    pub fn row(&self, s: usize) -> &[T] {
        let l = self.n_observed();
        &self.values[s * l..(s + 1) * l]
    }

    /// Precision applied to the `r`-th observed component.
    pub fn rm_for(&self, r: usize) -> T {
        match &self.rm_diag {
            Some(d) => d[r],
            None => self.rm,
        }
    }
}

/// Geometric continuation schedule `R_f(β) = rf0 · alpha^β`, β = 0..=beta_max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule<T> {
    pub rf0: T,
    pub alpha: T,
    pub beta_max: u32,
    pub k_branches: usize,
}

impl<T: Real> AnnealSchedule<T> {
    pub fn rf(&self, beta: u32) -> T {
        self.rf0 * self.alpha.powi(beta as i32)
    }

    pub fn betas(&self) -> impl Iterator<Item = u32> {
        0..=self.beta_max
    }
}

/// One β row of an [`ActionLevelTable`]. All vectors are aligned and sorted
/// by ascending action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow<T> {
    pub beta: u32,
    pub rf: T,
    pub action_values: Vec<T>,
    pub measurement_term_values: Vec<T>,
    /// Index of the β = 0 ancestor of each entry.
    pub branch_ids: Vec<usize>,
    /// Unknown-parameter estimates of each entry (empty rows for networks,
    /// where the weights are reported separately).
    pub params: Vec<Vec<T>>,
}

impl<T: Real> LevelRow<T> {
    pub fn lowest(&self) -> Option<T> {
        self.action_values.first().copied()
    }
}

/// Per-β sorted action values across branches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionLevelTable<T> {
    pub rows: Vec<LevelRow<T>>,
}

impl<T: Real> ActionLevelTable<T> {
    pub fn last(&self) -> Option<&LevelRow<T>> {
        self.rows.last()
    }

    /// Lowest action value at each β.
    pub fn lowest_levels(&self) -> Vec<T> {
        self.rows.iter().filter_map(|r| r.lowest()).collect()
    }
}
