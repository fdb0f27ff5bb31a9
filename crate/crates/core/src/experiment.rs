//! JSON experiment configuration and the end-to-end drivers built on it.
//!
//! A config has the sections `model`, `grid`, `observations`, `schedule`,
//! `optimizer` and `output`. See `configs/` in the repository for complete
//! examples of both model kinds.

use serde::{Deserialize, Serialize};

use crate::action::{MlAction, StandardAction};
use crate::annealing::{init_branches, init_network_branches, va_run_with, VaOutcome};
use crate::error::{Error, Result};
use crate::models::{Lorenz96Spec, MlpSpec, MlpWeights};
use crate::optimizer::MinimizeOptions;
use crate::rng::{streams, RngStream};
use crate::twin::{
    corrupt_mlp, generate_mlp_pairs, generate_mlp_truth, lorenz96_twin, spread_indices,
    MlpObservations, TruthOptions, TwinRecord,
};
use crate::types::{AnnealSchedule, LevelRow, ObservationSet, Path, TimeGrid};
use crate::validate::{validate_experiment, validate_schedule, ConfigIssue, ValidationReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Lorenz96 {
        dim: usize,
        forcing: f64,
        #[serde(default)]
        forcing_unknown: bool,
        /// Initial-guess range for ν when it is estimated.
        #[serde(default = "default_forcing_range")]
        forcing_range: (f64, f64),
        /// Range of the truth's initial condition.
        #[serde(default = "default_state_range")]
        x0_range: (f64, f64),
    },
    Mlp {
        n_neurons: usize,
        n_layers: usize,
        /// Training pairs `M`.
        m_pairs: usize,
    },
}

fn default_forcing_range() -> (f64, f64) {
    (5.0, 15.0)
}

fn default_state_range() -> (f64, f64) {
    (-10.0, 10.0)
}

/// Either explicit observation times, or `n_obs` times every `dt_obs`, or
/// (when both are absent) an observation every `steps_between_obs + 1`
/// slots from `t0` to `tF`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    #[serde(rename = "tF")]
    pub tf: Option<f64>,
    pub dt_model: Option<f64>,
    pub obs_times: Option<Vec<f64>>,
    pub dt_obs: Option<f64>,
    pub n_obs: Option<usize>,
    pub steps_between_obs: usize,
    /// Truth integration step; must divide `dt_model`. Defaults to
    /// `dt_model`.
    pub generation_dt: Option<f64>,
    pub spin_up_steps: usize,
}

impl GridConfig {
    pub fn resolve(&self) -> Result<TimeGrid<f64>> {
        let steps = self.steps_between_obs;
        if let Some(times) = &self.obs_times {
            let tf = self.tf.ok_or(Error::invalid("grid.tF", "required with obs_times"))?;
            let dt = self
                .dt_model
                .ok_or(Error::invalid("grid.dt_model", "required with obs_times"))?;
            return TimeGrid::new(self.t0, tf, dt, times.clone(), steps);
        }
        if let (Some(dt_obs), Some(n_obs)) = (self.dt_obs, self.n_obs) {
            return TimeGrid::regular(self.t0, dt_obs, n_obs, steps);
        }
        match (self.tf, self.dt_model) {
            (Some(tf), Some(dt)) => {
                if !(dt > 0.0) || !(tf > self.t0) {
                    return Err(Error::invalid("grid", "need tF > t0 and dt_model > 0"));
                }
                let n_steps = ((tf - self.t0) / dt).round() as usize;
                let stride = steps + 1;
                if !n_steps.is_multiple_of(stride) {
                    return Err(Error::invalid(
                        "grid.steps_between_obs",
                        format!("{n_steps} model steps do not split into intervals of {stride}"),
                    ));
                }
                TimeGrid::regular(self.t0, dt * stride as f64, n_steps / stride + 1, steps)
            }
            _ => Err(Error::invalid(
                "grid",
                "give obs_times, dt_obs with n_obs, or tF with dt_model",
            )),
        }
    }

    pub fn truth_options(&self, grid: &TimeGrid<f64>) -> Result<TruthOptions> {
        let substeps = match self.generation_dt {
            None => 1,
            Some(h) => {
                let ratio = grid.dt_model() / h;
                let n = ratio.round();
                if !(h > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
                    return Err(Error::invalid(
                        "grid.generation_dt",
                        format!("{h} does not divide dt_model = {}", grid.dt_model()),
                    ));
                }
                n as usize
            }
        };
        Ok(TruthOptions {
            spin_up_steps: self.spin_up_steps,
            substeps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationsConfig {
    /// Explicit observed components; overrides `n_observed`.
    #[serde(default)]
    pub observed_indices: Option<Vec<usize>>,
    /// `L`, spread evenly over the state when no indices are given.
    #[serde(default)]
    pub n_observed: Option<usize>,
    pub noise_variance: f64,
    /// Measurement precision; defaults to `1/noise_variance`.
    #[serde(default)]
    pub rm: Option<f64>,
}

impl ObservationsConfig {
    pub fn indices(&self, dim: usize) -> Result<Vec<usize>> {
        match (&self.observed_indices, self.n_observed) {
            (Some(idx), _) => Ok(idx.clone()),
            (None, Some(l)) if l >= 1 && l <= dim => Ok(spread_indices(l, dim)),
            (None, Some(l)) => Err(Error::invalid(
                "observations.n_observed",
                format!("need 1 <= L <= {dim}, got {l}"),
            )),
            (None, None) => Err(Error::invalid(
                "observations",
                "give observed_indices or n_observed",
            )),
        }
    }

    pub fn rm(&self) -> Result<f64> {
        match self.rm {
            Some(r) => Ok(r),
            None if self.noise_variance > 0.0 => Ok(1.0 / self.noise_variance),
            None => Err(Error::invalid(
                "observations.rm",
                "noise variance is zero, so rm must be given explicitly",
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Absolute `R_f0`. Either this or `rf0_ratio` must be present.
    #[serde(default)]
    pub rf0: Option<f64>,
    /// `R_f0 / R_m`.
    #[serde(default)]
    pub rf0_ratio: Option<f64>,
    pub alpha: f64,
    pub beta_max: u32,
    pub k_branches: usize,
    /// Initial-guess range for unobserved states.
    #[serde(default)]
    pub state_range: Option<(f64, f64)>,
    /// Initial-guess range for network weights.
    #[serde(default = "default_weight_range")]
    pub weight_range: (f64, f64),
}

fn default_weight_range() -> (f64, f64) {
    (-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Lorenz96 forecast horizon in model steps.
    pub forecast_steps: usize,
    /// Fresh pairs `M_P` for MLP prediction.
    pub m_predict: usize,
    pub boundary_tol: f64,
    /// Also write every final branch path, not just the lowest.
    pub write_paths: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            forecast_steps: 80,
            m_predict: 100,
            boundary_tol: 0.1,
            write_paths: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub observations: ObservationsConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub optimizer: MinimizeOptions<f64>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A config with every invariant checked and all defaults filled in.
#[derive(Clone, Debug)]
pub enum Resolved {
    Lorenz96(Lorenz96Setup),
    Mlp(MlpSetup),
}

#[derive(Clone, Debug)]
pub struct Lorenz96Setup {
    pub model: Lorenz96Spec<f64>,
    pub grid: TimeGrid<f64>,
    pub observed_indices: Vec<usize>,
    pub noise_variance: f64,
    pub rm: f64,
    pub x0_range: (f64, f64),
    pub truth: TruthOptions,
    pub schedule: AnnealSchedule<f64>,
    pub state_range: (f64, f64),
    pub param_ranges: Vec<(f64, f64)>,
    pub optimizer: MinimizeOptions<f64>,
    pub output: OutputConfig,
}

#[derive(Clone, Debug)]
pub struct MlpSetup {
    pub spec: MlpSpec,
    pub m_pairs: usize,
    pub observed_indices: Vec<usize>,
    pub noise_variance: f64,
    pub rm: f64,
    pub schedule: AnnealSchedule<f64>,
    pub state_range: (f64, f64),
    pub weight_range: (f64, f64),
    pub optimizer: MinimizeOptions<f64>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            file: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Checks everything and reports all problems at once.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut report = ValidationReport::default();
        let push = |report: &mut ValidationReport, e: Error| match e {
            Error::Config(r) => report.issues.extend(r.issues),
            Error::Invalid { field, message } => report.push(field, message),
            other => report.push("config", other.to_string()),
        };
        let rm = self.observations.rm().map_err(|e| push(&mut report, e)).ok();
        if !(self.observations.noise_variance >= 0.0) {
            report.push("observations.noise_variance", "must be >= 0");
        }
        if let Some(r) = rm {
            if !(r >= 0.0) || !r.is_finite() {
                report.push("observations.rm", "must be finite and >= 0");
            }
        }
        let rf0 = match (self.schedule.rf0, self.schedule.rf0_ratio, rm) {
            (Some(v), None, _) => Some(v),
            (None, Some(ratio), Some(r)) => Some(ratio * r),
            (None, Some(_), None) => None,
            _ => {
                report.push("schedule.rf0", "give exactly one of rf0 and rf0_ratio");
                None
            }
        };
        let schedule = AnnealSchedule {
            rf0: rf0.unwrap_or(f64::NAN),
            alpha: self.schedule.alpha,
            beta_max: self.schedule.beta_max,
            k_branches: self.schedule.k_branches,
        };
        if let Err(e) = self.optimizer.validate() {
            push(&mut report, e);
        }
        if !(self.output.boundary_tol > 0.0) {
            report.push("output.boundary_tol", "must be positive");
        }
        if self.output.m_predict == 0 {
            report.push("output.m_predict", "need at least one pair");
        }

        let resolved = match &self.model {
            ModelConfig::Lorenz96 {
                dim,
                forcing,
                forcing_unknown,
                forcing_range,
                x0_range,
            } => {
                let model = Lorenz96Spec::new(*dim, *forcing).map_err(|e| push(&mut report, e)).ok();
                let grid = self.grid.resolve().map_err(|e| push(&mut report, e)).ok();
                let indices = self.observations.indices(*dim).map_err(|e| push(&mut report, e)).ok();
                check_range(&mut report, "model.x0_range", *x0_range);
                check_range(&mut report, "model.forcing_range", *forcing_range);
                let state_range = self.schedule.state_range.unwrap_or(default_state_range());
                check_range(&mut report, "schedule.state_range", state_range);
                match (model, grid, indices) {
                    (Some(model), Some(grid), Some(indices)) => {
                        let truth = self.grid.truth_options(&grid).map_err(|e| push(&mut report, e)).ok();
                        let placeholder = ObservationSet::new(
                            vec![0.0; grid.obs_times().len() * indices.len()],
                            indices.clone(),
                            rm.unwrap_or(0.0),
                        );
                        if let Err(r) = validate_experiment(&grid, &placeholder, &schedule, *dim) {
                            report.issues.extend(r.issues);
                        }
                        let model = if *forcing_unknown { model.with_unknown_forcing() } else { model };
                        Some(Resolved::Lorenz96(Lorenz96Setup {
                            param_ranges: if *forcing_unknown { vec![*forcing_range] } else { vec![] },
                            model,
                            grid,
                            observed_indices: indices,
                            noise_variance: self.observations.noise_variance,
                            rm: rm.unwrap_or(0.0),
                            x0_range: *x0_range,
                            truth: truth.unwrap_or_default(),
                            schedule: schedule.clone(),
                            state_range,
                            optimizer: self.optimizer.clone(),
                            output: self.output.clone(),
                        }))
                    }
                    _ => {
                        validate_schedule(&schedule, &mut report);
                        None
                    }
                }
            }
            ModelConfig::Mlp {
                n_neurons,
                n_layers,
                m_pairs,
            } => {
                validate_schedule(&schedule, &mut report);
                let spec = MlpSpec::new(*n_neurons, *n_layers).map_err(|e| push(&mut report, e)).ok();
                if *m_pairs == 0 {
                    report.push("model.m_pairs", "need at least one pair");
                }
                let indices = self.observations.indices(*n_neurons).map_err(|e| push(&mut report, e)).ok();
                if let Some(idx) = &indices {
                    check_indices(&mut report, idx, *n_neurons);
                }
                let state_range = self.schedule.state_range.unwrap_or((0.0, 1.0));
                check_range(&mut report, "schedule.state_range", state_range);
                check_range(&mut report, "schedule.weight_range", self.schedule.weight_range);
                match (spec, indices) {
                    (Some(spec), Some(indices)) => Some(Resolved::Mlp(MlpSetup {
                        spec,
                        m_pairs: *m_pairs,
                        observed_indices: indices,
                        noise_variance: self.observations.noise_variance,
                        rm: rm.unwrap_or(0.0),
                        schedule: schedule.clone(),
                        state_range,
                        weight_range: self.schedule.weight_range,
                        optimizer: self.optimizer.clone(),
                        output: self.output.clone(),
                    })),
                    _ => None,
                }
            }
        };
        match resolved {
            Some(r) if report.is_empty() => Ok(r),
            _ => Err(report.into()),
        }
    }
}

fn check_range(report: &mut ValidationReport, field: &'static str, (lo, hi): (f64, f64)) {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        report.issues.push(ConfigIssue {
            field,
            message: format!("empty range [{lo}, {hi}]"),
        });
    }
}

fn check_indices(report: &mut ValidationReport, idx: &[usize], n: usize) {
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        report.push(
            "observations.observed_indices",
            format!("index out of range: {bad} with dimension {n}"),
        );
    }
    let mut sorted = idx.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != idx.len() {
        report.push("observations.observed_indices", "indices must be distinct");
    }
}

impl Lorenz96Setup {
    pub fn generate(&self, seed: u64) -> Result<TwinRecord<f64>> {
        lorenz96_twin(
            &self.model,
            &self.grid,
            self.x0_range,
            &self.observed_indices,
            self.noise_variance,
            Some(self.rm),
            &self.truth,
            seed,
        )
    }

    pub fn problem(&self, obs: &ObservationSet<f64>) -> Result<StandardAction<f64>> {
        StandardAction::new(obs.clone(), self.grid.clone(), self.model.clone())
    }

    pub fn init(&self, obs: &ObservationSet<f64>, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(init_branches(
            obs,
            &self.grid,
            self.model.dim,
            &self.param_ranges,
            self.state_range,
            self.schedule.k_branches,
            seed,
        )?
        .iter()
        .map(Path::to_vector)
        .collect())
    }

    pub fn anneal(
        &self,
        obs: &ObservationSet<f64>,
        seed: u64,
        on_row: impl FnMut(&LevelRow<f64>),
    ) -> Result<(StandardAction<f64>, VaOutcome<f64>)> {
        let problem = self.problem(obs)?;
        let init = self.init(obs, seed)?;
        let mut on_row = on_row;
        let out = va_run_with(&problem, init, &self.schedule, &self.optimizer, |row, _| on_row(row))?;
        Ok((problem, out))
    }
}

/// Truth network, training pairs and their noisy observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTwinRecord {
    pub weights: MlpWeights<f64>,
    pub paths: Vec<Path<f64>>,
    pub observations: MlpObservations<f64>,
    pub seed: u64,
    pub noise_variance: f64,
}

impl MlpSetup {
    pub fn generate(&self, seed: u64) -> Result<MlpTwinRecord> {
        let mut truth_rng = RngStream::new(seed, streams::TRUTH);
        let (weights, paths) = generate_mlp_truth(&self.spec, self.m_pairs, &mut truth_rng)?;
        let mut noise_rng = RngStream::new(seed, streams::NOISE);
        let observations = corrupt_mlp(
            &paths,
            &self.observed_indices,
            self.noise_variance,
            Some(self.rm),
            &mut noise_rng,
        )?;
        Ok(MlpTwinRecord {
            weights,
            paths,
            observations,
            seed,
            noise_variance: self.noise_variance,
        })
    }

    /// `m` fresh pairs from the same truth network, observed with the same
    /// noise, drawn from the prediction streams of `seed`.
    pub fn fresh_pairs(&self, truth: &MlpWeights<f64>, m: usize, seed: u64) -> Result<MlpObservations<f64>> {
        let mut rng = RngStream::new(seed, streams::PREDICTION);
        let paths = generate_mlp_pairs(&self.spec, truth, m, &mut rng)?;
        let mut noise = RngStream::new(seed, streams::PREDICTION + 1);
        corrupt_mlp(&paths, &self.observed_indices, self.noise_variance, Some(self.rm), &mut noise)
    }

    pub fn problem(&self, obs: &MlpObservations<f64>) -> Result<MlAction<f64>> {
        MlAction::new(obs.batch.clone(), self.spec.clone(), self.rm)
    }

    pub fn init(&self, obs: &MlpObservations<f64>, seed: u64) -> Result<Vec<Vec<f64>>> {
        init_network_branches(
            &obs.batch,
            &self.spec,
            self.state_range,
            self.weight_range,
            self.schedule.k_branches,
            seed,
        )
    }

    pub fn anneal(
        &self,
        obs: &MlpObservations<f64>,
        seed: u64,
        on_row: impl FnMut(&LevelRow<f64>),
    ) -> Result<(MlAction<f64>, VaOutcome<f64>)> {
        let problem = self.problem(obs)?;
        let init = self.init(obs, seed)?;
        let mut on_row = on_row;
        let out = va_run_with(&problem, init, &self.schedule, &self.optimizer, |row, _| on_row(row))?;
        Ok((problem, out))
    }
}
