//! Continuous-time diagnostics for converged paths: canonical momentum,
//! Euler-Lagrange defect, natural boundary conditions and the Hamiltonian.
//!
//! The stencil-based functions take the continuum precision `R_f`. A path
//! minimizing the discrete action with precision `rf` at step `dt`
//! corresponds to `continuum_rf(rf, dt) = rf·dt`; observations enter as
//! impulses `R_m(x − y)/dt` at their slot.
//!
//! Finite-difference stencils measure how well a path follows the
//! continuous flow, so on a path of the RK4 map at a coarse step their
//! truncation error (`R_f·O(dt²)`) swamps everything else. The `discrete_*`
//! variants use the RK4 map itself: `p_{n+½} = rf·(x_{n+1} − f(x_n))` is the
//! momentum conjugate to the discrete action, zero on every model
//! trajectory, and the discrete Euler-Lagrange defect is the action gradient
//! per unit time.

use serde::{Deserialize, Serialize};

use crate::action::StandardAction;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::lorenz96::{jvp_into, vector_field_into, vjp_accumulate, Rk4Workspace};
use crate::models::Lorenz96Spec;
use crate::scalar::Real;
use crate::types::{ObservationSet, Path, TimeGrid};

pub fn continuum_rf<T: Real>(rf: T, dt: T) -> T {
    rf * dt
}

/// Observed components active at one instant.
#[derive(Clone, Copy, Debug)]
pub struct ActiveObservation<'a, T> {
    pub indices: &'a [usize],
    pub values: &'a [T],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCheck<T> {
    pub start: T,
    pub end: T,
    pub interior_max: T,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDiagnostics<T> {
    /// Stencil momentum, `[T+1][D]`.
    pub momentum: Matrix<T>,
    /// Stencil Euler-Lagrange defect, `[T+1][D]`.
    pub el_residual: Matrix<T>,
    pub boundary: BoundaryCheck<T>,
    /// Hamiltonian per slot with the observation term dropped, i.e. the
    /// value conserved between observations.
    pub hamiltonian_trace: Vec<T>,
    /// `[T][D]`, row `n` on the interval from slot `n` to `n+1`.
    pub discrete_momentum: Matrix<T>,
    /// `[T+1][D]`.
    pub discrete_el_residual: Matrix<T>,
    pub discrete_boundary: BoundaryCheck<T>,
}

fn check_slots<T>(path: &Path<T>, grid: &TimeGrid<T>, model: &Lorenz96Spec<T>, min_steps: usize) -> Result<()>
where
    T: Real,
{
    Error::check_len("path slots", grid.n_slots(), path.n_slots())?;
    Error::check_len("path dimension", model.dim, path.dim())?;
    if model.dim < 4 {
        return Err(Error::invalid("model.dim", "Lorenz96 needs D >= 4"));
    }
    if grid.n_steps() < min_steps {
        return Err(Error::invalid(
            "grid",
            format!("derivative stencils need at least {min_steps} steps, got {}", grid.n_steps()),
        ));
    }
    Ok(())
}

/// Second-order first derivative along slots: centered inside,
/// one-sided three-point at both ends.
fn first_derivative<T: Real>(path: &Path<T>, h: T) -> Matrix<T> {
    let (n, d) = (path.n_slots(), path.dim());
    let last = n - 1;
    let (two, three, four) = (T::lit(2.0), T::lit(3.0), T::lit(4.0));
    let mut out = Matrix::zeros(n, d);
    for a in 0..d {
        let x = |s: usize| path.state(s)[a];
        out[(0, a)] = (-three * x(0) + four * x(1) - x(2)) / (two * h);
        for s in 1..last {
            out[(s, a)] = (x(s + 1) - x(s - 1)) / (two * h);
        }
        out[(last, a)] = (three * x(last) - four * x(last - 1) + x(last - 2)) / (two * h);
    }
    out
}

/// Second-order second derivative: centered inside, one-sided four-point at
/// both ends.
fn second_derivative<T: Real>(path: &Path<T>, h: T) -> Matrix<T> {
    let (n, d) = (path.n_slots(), path.dim());
    let last = n - 1;
    let (two, four, five) = (T::lit(2.0), T::lit(4.0), T::lit(5.0));
    let h2 = h * h;
    let mut out = Matrix::zeros(n, d);
    for a in 0..d {
        let x = |s: usize| path.state(s)[a];
        out[(0, a)] = (two * x(0) - five * x(1) + four * x(2) - x(3)) / h2;
        for s in 1..last {
            out[(s, a)] = (x(s + 1) - two * x(s) + x(s - 1)) / h2;
        }
        out[(last, a)] =
            (two * x(last) - five * x(last - 1) + four * x(last - 2) - x(last - 3)) / h2;
    }
    out
}

/// `p = R_f(ẋ − F(x))` at every slot.
pub fn canonical_momentum<T: Real>(
    path: &Path<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    rf: T,
) -> Result<Matrix<T>> {
    check_slots(path, grid, model, 2)?;
    let nu = model.forcing_for(path.params());
    let mut p = first_derivative(path, grid.dt_model());
    let mut f = vec![T::zero(); model.dim];
    for s in 0..path.n_slots() {
        vector_field_into(path.state(s), nu, &mut f);
        for (pa, &fa) in p.row_mut(s).iter_mut().zip(&f) {
            *pa = rf * (*pa - fa);
        }
    }
    Ok(p)
}

/// Defect of `R_f[d/dt + DFᵀ](ẋ − F) − R_m(x − y)δ(t − τ)`.
///
/// `d/dt(ẋ − F)` is expanded as `ẍ − DF·ẋ`, with second-order stencils
/// for `ẋ` and `ẍ`.
pub fn el_residual<T: Real>(
    path: &Path<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    obs: &ObservationSet<T>,
    rf: T,
) -> Result<Matrix<T>> {
    check_slots(path, grid, model, 3)?;
    Error::check_len("observation times", grid.obs_slots().len(), obs.n_times())?;
    let h = grid.dt_model();
    let nu = model.forcing_for(path.params());
    let d = model.dim;
    let xd = first_derivative(path, h);
    let xdd = second_derivative(path, h);
    let mut out = Matrix::zeros(path.n_slots(), d);
    let (mut f, mut jx, mut u) = (vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]);
    for s in 0..path.n_slots() {
        let x = path.state(s);
        vector_field_into(x, nu, &mut f);
        jvp_into(x, xd.row(s), &mut jx);
        for a in 0..d {
            u[a] = xd[(s, a)] - f[a];
        }
        let row = out.row_mut(s);
        for a in 0..d {
            row[a] = xdd[(s, a)] - jx[a];
        }
        vjp_accumulate(x, &u, row);
        row.iter_mut().for_each(|v| *v *= rf);
    }
    for (k, &slot) in grid.obs_slots().iter().enumerate() {
        let y = obs.row(k);
        let x = path.state(slot);
        for (r, &i) in obs.observed_indices.iter().enumerate() {
            out[(slot, i)] -= obs.rm_for(r) * (x[i] - y[r]) / h;
        }
    }
    Ok(out)
}

/// Endpoint momentum norms against the interior maximum; passes iff both
/// are at most `tol` times it.
pub fn boundary_condition_check<T: Real>(momentum: &Matrix<T>, tol: T) -> BoundaryCheck<T> {
    let n = momentum.rows();
    let norm = |s: usize| momentum.row(s).iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if n == 0 {
        return BoundaryCheck {
            start: T::zero(),
            end: T::zero(),
            interior_max: T::zero(),
            pass: true,
        };
    }
    let (start, end) = (norm(0), norm(n - 1));
    let interior_max = (1..n.saturating_sub(1)).map(norm).fold(T::zero(), T::max);
    let limit = tol * interior_max;
    BoundaryCheck {
        start,
        end,
        interior_max,
        pass: start <= limit && end <= limit,
    }
}

fn check_rf<T: Real>(rf: T) -> Result<()> {
    if rf > T::zero() && rf.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("rf", "Hamiltonian needs a positive, finite rf"))
    }
}

fn check_active<T: Real>(y: &Option<ActiveObservation<'_, T>>, d: usize) -> Result<()> {
    if let Some(y) = y {
        Error::check_len("active observation", y.indices.len(), y.values.len())?;
        if let Some(&bad) = y.indices.iter().find(|&&i| i >= d) {
            return Err(Error::invalid(
                "observed_indices",
                format!("index out of range: {bad} with dimension {d}"),
            ));
        }
    }
    Ok(())
}

/// `H = Σ_a [p_a²/2R_f + p_a F_a(x)] − Σ_r (R_m/2)(x_r − y_r)²`.
pub fn hamiltonian_eval<T: Real>(
    x: &[T],
    p: &[T],
    y_active: Option<ActiveObservation<'_, T>>,
    model: &Lorenz96Spec<T>,
    rf: T,
    rm: T,
) -> Result<T> {
    check_rf(rf)?;
    Error::check_len("state", model.dim, x.len())?;
    Error::check_len("costate", model.dim, p.len())?;
    check_active(&y_active, model.dim)?;
    let mut f = vec![T::zero(); model.dim];
    vector_field_into(x, model.forcing, &mut f);
    let two = T::lit(2.0);
    let mut h = p
        .iter()
        .zip(&f)
        .map(|(&pa, &fa)| pa * pa / (two * rf) + pa * fa)
        .sum::<T>();
    if let Some(y) = y_active {
        for (&i, &v) in y.indices.iter().zip(y.values) {
            h -= rm / two * (x[i] - v) * (x[i] - v);
        }
    }
    Ok(h)
}

/// Hamilton's equations: `ẋ = F + p/R_f`, `ṗ = −DFᵀp + R_m(x − y)`.
///
/// The observation term is the amplitude of the impulse at an observation
/// instant; it is included only when `y_active` is given.
pub fn hamilton_rhs<T: Real>(
    x: &[T],
    p: &[T],
    y_active: Option<ActiveObservation<'_, T>>,
    model: &Lorenz96Spec<T>,
    rf: T,
    rm: T,
) -> Result<(Vec<T>, Vec<T>)> {
    check_rf(rf)?;
    Error::check_len("state", model.dim, x.len())?;
    Error::check_len("costate", model.dim, p.len())?;
    check_active(&y_active, model.dim)?;
    let mut dx = vec![T::zero(); model.dim];
    vector_field_into(x, model.forcing, &mut dx);
    for (v, &pa) in dx.iter_mut().zip(p) {
        *v += pa / rf;
    }
    let mut dp = vec![T::zero(); model.dim];
    vjp_accumulate(x, p, &mut dp);
    dp.iter_mut().for_each(|v| *v = -*v);
    if let Some(y) = y_active {
        for (&i, &v) in y.indices.iter().zip(y.values) {
            dp[i] += rm * (x[i] - v);
        }
    }
    Ok((dx, dp))
}

/// `rf·(x_{n+1} − f(x_n))` for each model step; `rf` is the discrete
/// precision.
pub fn discrete_momentum<T: Real>(
    path: &Path<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    rf: T,
) -> Result<Matrix<T>> {
    check_slots(path, grid, model, 1)?;
    let d = model.dim;
    let nu = model.forcing_for(path.params());
    let mut ws = Rk4Workspace::new(d);
    let mut next = vec![T::zero(); d];
    let mut out = Matrix::zeros(grid.n_steps(), d);
    for n in 0..grid.n_steps() {
        ws.step(path.state(n), nu, grid.dt_model(), &mut next);
        for (o, (&x, &f)) in out.row_mut(n).iter_mut().zip(path.state(n + 1).iter().zip(&next)) {
            *o = rf * (x - f);
        }
    }
    Ok(out)
}

/// Gradient of the discrete action with respect to the states, divided by
/// `dt`, at every slot. Zero exactly at a stationary path.
pub fn discrete_el_residual<T: Real>(
    path: &Path<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    obs: &ObservationSet<T>,
    rf: T,
) -> Result<Matrix<T>> {
    let action = StandardAction::new(obs.clone(), grid.clone(), model.clone())?;
    let mut g = action.gradient(path, rf)?;
    g.truncate(action.n_state_vars());
    let dt = grid.dt_model();
    g.iter_mut().for_each(|v| *v /= dt);
    Ok(Matrix::from_row_major(grid.n_slots(), model.dim, g))
}

/// All diagnostics for one path. `rf` is the discrete precision used by
/// the annealing run; the stencil diagnostics use `continuum_rf(rf, dt)`.
pub fn diagnostics<T: Real>(
    path: &Path<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    obs: &ObservationSet<T>,
    rf_discrete: T,
    boundary_tol: T,
) -> Result<ContinuousDiagnostics<T>> {
    let rf = continuum_rf(rf_discrete, grid.dt_model());
    let discrete = discrete_momentum(path, grid, model, rf_discrete)?;
    let discrete_boundary = boundary_condition_check(&discrete, boundary_tol);
    let discrete_el_residual = discrete_el_residual(path, grid, model, obs, rf_discrete)?;
    let momentum = canonical_momentum(path, grid, model, rf)?;
    let el = el_residual(path, grid, model, obs, rf)?;
    let boundary = boundary_condition_check(&momentum, boundary_tol);
    let resolved = Lorenz96Spec {
        forcing: model.forcing_for(path.params()),
        ..model.clone()
    };
    let hamiltonian_trace = if rf > T::zero() {
        (0..path.n_slots())
            .map(|s| hamiltonian_eval(path.state(s), momentum.row(s), None, &resolved, rf, obs.rm))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![T::zero(); path.n_slots()]
    };
    Ok(ContinuousDiagnostics {
        momentum,
        el_residual: el,
        boundary,
        hamiltonian_trace,
        discrete_momentum: discrete,
        discrete_el_residual,
        discrete_boundary,
    })
}
