//! Cross-checks an experiment before any numerical work starts.

use std::collections::BTreeSet;
use std::fmt;

use crate::scalar::{all_finite, Real};
use crate::types::{AnnealSchedule, ObservationSet, TimeGrid};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: &'static str,
    pub message: String,
}

/// Every problem found in a configuration, each tagged with the offending field.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ConfigIssue>,
}

impl ValidationReport {
    pub fn push(&mut self, field: &'static str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            field,
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.issues
            .iter()
            .any(|i| i.message.contains(needle) || i.field.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", issue.field, issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// A configuration whose invariants and cross-references all hold.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedExperiment<T: Real> {
    pub grid: TimeGrid<T>,
    pub obs: ObservationSet<T>,
    pub schedule: AnnealSchedule<T>,
    pub model_dim: usize,
}

pub fn validate_schedule<T: Real>(schedule: &AnnealSchedule<T>, report: &mut ValidationReport) {
    if !(schedule.rf0 > T::zero() && schedule.rf0.is_finite()) {
        report.push("schedule.rf0", "rf0 must be positive");
    }
    if !(schedule.alpha > T::one() && schedule.alpha.is_finite()) {
        report.push("schedule.alpha", "alpha must exceed 1");
    }
    if schedule.k_branches < 1 {
        report.push("schedule.k_branches", "need at least one branch");
    }
}

pub fn validate_observations<T: Real>(
    obs: &ObservationSet<T>,
    n_times: usize,
    model_dim: usize,
    report: &mut ValidationReport,
) {
    let l = obs.observed_indices.len();
    if l > model_dim {
        report.push(
            "observations.observed_indices",
            format!("L = {l} exceeds model dimension {model_dim}"),
        );
    }
    if let Some(&bad) = obs.observed_indices.iter().find(|&&i| i >= model_dim) {
        report.push(
            "observations.observed_indices",
            format!("index out of range: {bad} with dimension {model_dim}"),
        );
    }
    let distinct: BTreeSet<_> = obs.observed_indices.iter().collect();
    if distinct.len() != l {
        report.push("observations.observed_indices", "indices must be distinct");
    }
    if obs.values.len() != n_times * l {
        report.push(
            "observations.values",
            format!(
                "dimension mismatch: expected {} x {} values, got {}",
                n_times,
                l,
                obs.values.len()
            ),
        );
    }
    if !all_finite(&obs.values) {
        report.push("observations.values", "non-finite observation");
    }
    if !(obs.rm >= T::zero() && obs.rm.is_finite()) {
        report.push("observations.rm", "rm must be finite and nonnegative");
    }
    if let Some(d) = &obs.rm_diag {
        if d.len() != l {
            report.push(
                "observations.rm_diag",
                format!("dimension mismatch: expected {l} entries, got {}", d.len()),
            );
        }
        if d.iter().any(|&v| !(v >= T::zero() && v.is_finite())) {
            report.push("observations.rm_diag", "entries must be finite and nonnegative");
        }
    }
}

/// Checks all type invariants and cross-references (`L ≤ D`,
/// `S = |obs_times|`, index ranges, schedule constants).
pub fn validate_experiment<T: Real>(
    grid: &TimeGrid<T>,
    obs: &ObservationSet<T>,
    schedule: &AnnealSchedule<T>,
    model_dim: usize,
) -> Result<ValidatedExperiment<T>, ValidationReport> {
    let mut report = ValidationReport::default();
    if model_dim == 0 {
        report.push("model.dim", "model dimension must be positive");
    }
    validate_observations(obs, grid.obs_times().len(), model_dim, &mut report);
    validate_schedule(schedule, &mut report);
    if report.is_empty() {
        Ok(ValidatedExperiment {
            grid: grid.clone(),
            obs: obs.clone(),
            schedule: schedule.clone(),
            model_dim,
        })
    } else {
        Err(report)
    }
}
