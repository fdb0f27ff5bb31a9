//! Variational annealing: continuation in the model precision `R_f`.
//!
//! `K` branches start from data-consistent random paths. At each β the
//! action at `R_f(β) = rf0·α^β` is minimized from every branch's previous
//! result, and the sorted action values form one row of the level table.
//! Branches are never resampled, exchanged or restarted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionProblem, MlBatch};
use crate::error::{Error, Result};
use crate::models::MlpSpec;
use crate::optimizer::{minimize, MinimizeOptions, MinimizeStatus};
use crate::rng::{streams, RngStream};
use crate::scalar::Real;
use crate::types::{ActionLevelTable, AnnealSchedule, LevelRow, ObservationSet, Path, TimeGrid};
use crate::validate::{validate_schedule, ValidationReport};

/// One annealing branch and the outcome of its latest minimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch<T> {
    /// Index of the β = 0 ancestor.
    pub id: usize,
    pub x: Vec<T>,
    pub action: T,
    pub measurement_term: T,
    pub status: Option<MinimizeStatus>,
    pub iterations: usize,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaState<T> {
    pub beta: u32,
    pub branches: Vec<Branch<T>>,
    pub schedule: AnnealSchedule<T>,
}

impl<T: Real> VaState<T> {
    /// Live branches sorted by ascending action.
    pub fn ranked(&self) -> Vec<&Branch<T>> {
        let mut live: Vec<_> = self.branches.iter().filter(|b| !b.failed).collect();
        live.sort_by(|a, b| a.action.partial_cmp(&b.action).expect("finite actions"));
        live
    }
}

#[derive(Clone, Debug)]
pub struct VaOutcome<T> {
    pub table: ActionLevelTable<T>,
    pub state: VaState<T>,
}

/// Random starting paths with observed components pinned to the data.
///
/// Branch `k` draws from stream `BRANCH_BASE + k` of `seed`, so each path is
/// independent of `K` and of execution order. A zero-width range yields its
/// single value.
#[allow(clippy::too_many_arguments)]
pub fn init_branches<T: Real>(
    obs: &ObservationSet<T>,
    grid: &TimeGrid<T>,
    model_dim: usize,
    param_ranges: &[(T, T)],
    state_range: (T, T),
    k: usize,
    seed: u64,
) -> Result<Vec<Path<T>>> {
    if k < 1 {
        return Err(Error::invalid("schedule.k_branches", "need at least one branch"));
    }
    check_range(state_range, "schedule.state_range")?;
    for &r in param_ranges {
        check_range(r, "schedule.param_ranges")?;
    }
    let n_slots = grid.n_slots();
    (0..k)
        .map(|b| {
            let mut rng = RngStream::new(seed, streams::BRANCH_BASE + b as u64);
            let states = draw(&mut rng, state_range, n_slots * model_dim)?;
            let params = param_ranges
                .iter()
                .map(|&(lo, hi)| rng.uniform_or_const(lo, hi))
                .collect::<Result<Vec<_>>>()?;
            let mut path = Path::from_parts(model_dim, states, params)?;
            for (s, &slot) in grid.obs_slots().iter().enumerate() {
                let row = obs.row(s);
                let x = path.state_mut(slot);
                for (r, &idx) in obs.observed_indices.iter().enumerate() {
                    x[idx] = row[r];
                }
            }
            Ok(path)
        })
        .collect()
}

/// Network analogue of [`init_branches`]: layer states uniform in
/// `state_range` with the observed input and output neurons set to the data;
/// weights uniform in `weight_range`. Returns flat vectors in the
/// [`crate::action::NetworkPath`] layout.
pub fn init_network_branches<T: Real>(
    batch: &MlBatch<T>,
    spec: &MlpSpec,
    state_range: (T, T),
    weight_range: (T, T),
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if k < 1 {
        return Err(Error::invalid("schedule.k_branches", "need at least one branch"));
    }
    check_range(state_range, "schedule.state_range")?;
    check_range(weight_range, "schedule.weight_range")?;
    batch.validate(spec.n_neurons)?;
    let n = spec.n_neurons;
    let per = spec.n_layers * n;
    let m = batch.n_pairs();
    (0..k)
        .map(|b| {
            let mut rng = RngStream::new(seed, streams::BRANCH_BASE + b as u64);
            let mut x = draw(&mut rng, state_range, m * per)?;
            x.extend(draw(&mut rng, weight_range, spec.n_weights())?);
            for pair in 0..m {
                for (r, &idx) in batch.observed_indices.iter().enumerate() {
                    x[pair * per + idx] = batch.input(pair)[r];
                    x[pair * per + (spec.n_layers - 1) * n + idx] = batch.output(pair)[r];
                }
            }
            Ok(x)
        })
        .collect()
}

fn check_range<T: Real>((lo, hi): (T, T), field: &'static str) -> Result<()> {
    if lo <= hi && lo.is_finite() && hi.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("empty range [{lo}, {hi}]")))
    }
}

fn draw<T: Real>(rng: &mut RngStream, (lo, hi): (T, T), n: usize) -> Result<Vec<T>> {
    if lo == hi {
        Ok(vec![lo; n])
    } else {
        rng.uniform_draw(lo, hi, n)
    }
}

/// Runs the full schedule from the given starting vectors.
pub fn va_run<T: Real, P: ActionProblem<T>>(
    problem: &P,
    init: Vec<Vec<T>>,
    schedule: &AnnealSchedule<T>,
    opts: &MinimizeOptions<T>,
) -> Result<VaOutcome<T>> {
    va_run_with(problem, init, schedule, opts, |_, _| {})
}

/// [`va_run`] with a callback invoked after every β row is recorded.
pub fn va_run_with<T, P, F>(
    problem: &P,
    init: Vec<Vec<T>>,
    schedule: &AnnealSchedule<T>,
    opts: &MinimizeOptions<T>,
    mut on_row: F,
) -> Result<VaOutcome<T>>
where
    T: Real,
    P: ActionProblem<T>,
    F: FnMut(&LevelRow<T>, &VaState<T>),
{
    let mut report = ValidationReport::default();
    validate_schedule(schedule, &mut report);
    if !report.is_empty() {
        return Err(report.into());
    }
    opts.validate()?;
    if init.is_empty() {
        return Err(Error::invalid("init", "need at least one starting path"));
    }
    for x in &init {
        Error::check_len("starting path", problem.n_vars(), x.len())?;
    }

    let mut state = VaState {
        beta: 0,
        branches: init
            .into_iter()
            .enumerate()
            .map(|(id, x)| Branch {
                id,
                x,
                action: T::nan(),
                measurement_term: T::nan(),
                status: None,
                iterations: 0,
                failed: false,
            })
            .collect(),
        schedule: schedule.clone(),
    };
    let mut table = ActionLevelTable { rows: Vec::new() };

    for beta in schedule.betas() {
        let rf = schedule.rf(beta);
        state.beta = beta;
        state
            .branches
            .par_iter_mut()
            .filter(|b| !b.failed)
            .for_each(|b| anneal_step(problem, b, rf, opts));

        let ranked = state.ranked();
        let row = LevelRow {
            beta,
            rf,
            action_values: ranked.iter().map(|b| b.action).collect(),
            measurement_term_values: ranked.iter().map(|b| b.measurement_term).collect(),
            branch_ids: ranked.iter().map(|b| b.id).collect(),
            params: ranked.iter().map(|b| problem.params(&b.x).to_vec()).collect(),
        };
        log::debug!(
            "beta {beta} rf {rf:e}: lowest {:?} over {} branches",
            row.lowest(),
            row.action_values.len()
        );
        on_row(&row, &state);
        table.rows.push(row);
    }
    Ok(VaOutcome { table, state })
}

fn anneal_step<T: Real, P: ActionProblem<T>>(
    problem: &P,
    branch: &mut Branch<T>,
    rf: T,
    opts: &MinimizeOptions<T>,
) {
    let result = minimize(
        |x: &[T], g: &mut [T]| problem.evaluate_with_gradient(x, rf, g).total,
        &branch.x,
        opts,
    );
    match result {
        Ok(r) if r.f_star.is_finite() => {
            let breakdown = problem.evaluate(&r.x_star, rf);
            branch.x = r.x_star;
            branch.action = breakdown.total;
            branch.measurement_term = breakdown.measurement_term;
            branch.status = Some(r.status);
            branch.iterations = r.iterations;
        }
        Ok(_) | Err(_) => {
            log::warn!("branch {} failed at rf {rf:e}", branch.id);
            branch.failed = true;
        }
    }
}

/// Default grouping tolerance: the noise scale `1/√R_m`.
pub fn default_group_tol<T: Real>(rm: T) -> T {
    T::one() / rm.sqrt()
}

/// Single-linkage grouping of sorted values: neighbours closer than `tol`
/// share a level. Returns `(level minimum, multiplicity)` pairs.
pub fn group_levels<T: Real>(sorted_values: &[T], tol: T) -> Vec<(T, usize)> {
    let mut levels: Vec<(T, usize)> = Vec::new();
    let mut prev: Option<T> = None;
    for &v in sorted_values {
        match (prev, levels.last_mut()) {
            (Some(p), Some(last)) if v - p <= tol => last.1 += 1,
            _ => levels.push((v, 1)),
        }
        prev = Some(v);
    }
    levels
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    /// The lowest level has plateaued at the expected measurement level.
    Consistent,
    /// The lowest level is still moving, or too few rows exist.
    NotYet,
    /// The lowest level has plateaued away from the expected level: the
    /// branch is likely trapped in a non-global minimum.
    Inconsistent,
}

/// Compares the lowest level over the last `window` rows to `expected_level`.
pub fn convergence_check<T: Real>(
    table: &ActionLevelTable<T>,
    expected_level: T,
    window: usize,
    rel_tol: T,
) -> Convergence {
    let lows = table.lowest_levels();
    if window == 0 || lows.len() < window {
        return Convergence::NotYet;
    }
    let recent = &lows[lows.len() - window..];
    let last = recent[window - 1];
    let (lo, hi) = recent
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = last.abs().max(T::epsilon());
    if (hi - lo) / scale >= rel_tol {
        return Convergence::NotYet;
    }
    let reference = expected_level.abs().max(T::epsilon());
    if (last - expected_level).abs() / reference < rel_tol {
        Convergence::Consistent
    } else {
        Convergence::Inconsistent
    }
}

/// Result of rerunning a schedule with a smaller growth factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaCheck<T> {
    pub alpha: T,
    pub alpha_check: T,
    pub final_rf: T,
    pub lowest: T,
    pub lowest_check: T,
    pub difference: T,
}

/// Reruns `schedule` with `alpha_check < alpha` up to (at least) the same
/// final `R_f` and compares the lowest levels reached.
pub fn alpha_check<T: Real, P: ActionProblem<T>>(
    problem: &P,
    init: Vec<Vec<T>>,
    schedule: &AnnealSchedule<T>,
    reference: &ActionLevelTable<T>,
    alpha_check: T,
    opts: &MinimizeOptions<T>,
) -> Result<AlphaCheck<T>> {
    if !(alpha_check > T::one() && alpha_check < schedule.alpha) {
        return Err(Error::invalid(
            "alpha_check",
            "check value must satisfy 1 < alpha' < alpha",
        ));
    }
    let final_rf = schedule.rf(schedule.beta_max);
    let steps = ((final_rf / schedule.rf0).ln() / alpha_check.ln()).ceil();
    let fine = AnnealSchedule {
        alpha: alpha_check,
        beta_max: steps.to_u32().unwrap_or(0),
        ..schedule.clone()
    };
    let rerun = va_run(problem, init, &fine, opts)?;
    let lowest = reference
        .last()
        .and_then(LevelRow::lowest)
        .ok_or(Error::invalid("table", "reference table is empty"))?;
    let lowest_check = rerun
        .table
        .last()
        .and_then(LevelRow::lowest)
        .ok_or(Error::invalid("table", "all branches failed"))?;
    Ok(AlphaCheck {
        alpha: schedule.alpha,
        alpha_check,
        final_rf,
        lowest,
        lowest_check,
        difference: lowest_check - lowest,
    })
}
