use crate::error::{Error, Result};
use crate::models::lorenz96::Rk4Workspace;
use crate::models::Lorenz96Spec;
use crate::scalar::Real;
use crate::types::{ObservationSet, Path, TimeGrid};
use crate::validate::{validate_observations, ValidationReport};

use super::{ActionBreakdown, ActionProblem};

/// Time-series action `A0` for Lorenz96 with the RK4 map as the discrete
/// model:
///
/// `Σ_s Σ_r R_m/2 (x_r(τ_s) − y_r(τ_s))² + Σ_n Σ_a R_f/2 (x_a(t_{n+1}) − f_a(x(t_n)))²`
#[derive(Clone, Debug)]
pub struct StandardAction<T: Real> {
    obs: ObservationSet<T>,
    grid: TimeGrid<T>,
    model: Lorenz96Spec<T>,
    obs_slots: Vec<usize>,
}

impl<T: Real> StandardAction<T> {
    pub fn new(obs: ObservationSet<T>, grid: TimeGrid<T>, model: Lorenz96Spec<T>) -> Result<Self> {
        if model.dim < 4 {
            return Err(Error::invalid("model.dim", "Lorenz96 needs D >= 4"));
        }
        let mut report = ValidationReport::default();
        validate_observations(&obs, grid.obs_times().len(), model.dim, &mut report);
        if !report.is_empty() {
            return Err(report.into());
        }
        let obs_slots = grid.obs_slots().to_vec();
        Ok(Self {
            obs,
            grid,
            model,
            obs_slots,
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn obs(&self) -> &ObservationSet<T> {
        &self.obs
    }

    pub fn model(&self) -> &Lorenz96Spec<T> {
        &self.model
    }

    pub fn n_state_vars(&self) -> usize {
        self.grid.n_slots() * self.model.dim
    }

    pub fn to_path(&self, x: &[T]) -> Path<T> {
        Path::from_vector(x, self.grid.n_slots(), self.model.dim).expect("vector length")
    }

    fn check_path(&self, path: &Path<T>) -> Result<()> {
        Error::check_len("path dimension", self.model.dim, path.dim())?;
        Error::check_len("path slots", self.grid.n_slots(), path.n_slots())?;
        Error::check_len("path parameters", self.model.n_params(), path.params().len())
    }

    fn measurement(&self, x: &[T], grad: Option<&mut [T]>) -> T {
        let d = self.model.dim;
        let half = T::lit(0.5);
        let mut total = T::zero();
        let mut grad = grad;
        for (s, &slot) in self.obs_slots.iter().enumerate() {
            let y = self.obs.row(s);
            for (r, &idx) in self.obs.observed_indices.iter().enumerate() {
                let rm = self.obs.rm_for(r);
                let e = x[slot * d + idx] - y[r];
                total += half * rm * e * e;
                if let Some(g) = grad.as_deref_mut() {
                    g[slot * d + idx] += rm * e;
                }
            }
        }
        total
    }

    fn run(&self, x: &[T], rf: T, mut grad: Option<&mut [T]>) -> ActionBreakdown<T> {
        let d = self.model.dim;
        let n_states = self.n_state_vars();
        debug_assert_eq!(x.len(), self.n_vars());
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        let meas = self.measurement(x, grad.as_deref_mut());

        let nu = self.model.forcing_for(&x[n_states..]);
        let dt = self.grid.dt_model();
        let half = T::lit(0.5);
        let mut ws = Rk4Workspace::new(d);
        let mut f = vec![T::zero(); d];
        let mut u = vec![T::zero(); d];
        let mut model = T::zero();
        let mut grad_nu = T::zero();
        for n in 0..self.grid.n_steps() {
            let (xn, xn1) = (&x[n * d..(n + 1) * d], &x[(n + 1) * d..(n + 2) * d]);
            ws.step(xn, nu, dt, &mut f);
            let mut sq = T::zero();
            for a in 0..d {
                let e = xn1[a] - f[a];
                sq += e * e;
                u[a] = -rf * e;
            }
            model += half * rf * sq;
            if let Some(g) = grad.as_deref_mut() {
                for a in 0..d {
                    g[(n + 1) * d + a] -= u[a];
                }
                grad_nu += ws.vjp(&u, dt, &mut g[n * d..(n + 1) * d]);
            }
        }
        if let Some(g) = grad {
            if self.model.forcing_unknown {
                g[n_states] = grad_nu;
            }
        }
        ActionBreakdown::new(meas, model, rf, self.obs.rm)
    }

    /// Action at a path; errors on dimension mismatch.
    pub fn action(&self, path: &Path<T>, rf: T) -> Result<ActionBreakdown<T>> {
        self.check_path(path)?;
        Ok(self.run(&path.to_vector(), rf, None))
    }

    /// Gradient at a path over (all states, unknown parameters).
    pub fn gradient(&self, path: &Path<T>, rf: T) -> Result<Vec<T>> {
        self.check_path(path)?;
        let x = path.to_vector();
        let mut g = vec![T::zero(); x.len()];
        self.run(&x, rf, Some(&mut g));
        Ok(g)
    }
}

impl<T: Real> ActionProblem<T> for StandardAction<T> {
    fn n_vars(&self) -> usize {
        self.n_state_vars() + self.model.n_params()
    }

    fn rm(&self) -> T {
        self.obs.rm
    }

    fn evaluate(&self, x: &[T], rf: T) -> ActionBreakdown<T> {
        self.run(x, rf, None)
    }

    fn evaluate_with_gradient(&self, x: &[T], rf: T, grad: &mut [T]) -> ActionBreakdown<T> {
        self.run(x, rf, Some(grad))
    }

    fn params<'a>(&self, x: &'a [T]) -> &'a [T] {
        &x[self.n_state_vars()..]
    }
}

pub fn action_standard<T: Real>(
    path: &Path<T>,
    obs: &ObservationSet<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    rf: T,
) -> Result<ActionBreakdown<T>> {
    StandardAction::new(obs.clone(), grid.clone(), model.clone())?.action(path, rf)
}

pub fn action_standard_gradient<T: Real>(
    path: &Path<T>,
    obs: &ObservationSet<T>,
    grid: &TimeGrid<T>,
    model: &Lorenz96Spec<T>,
    rf: T,
) -> Result<Vec<T>> {
    StandardAction::new(obs.clone(), grid.clone(), model.clone())?.gradient(path, rf)
}
