//! Limited-memory quasi-Newton minimization with a strong Wolfe line search,
//! optional box bounds, and a central-difference gradient oracle.

mod line_search;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, max_abs, Real};

use line_search::{strong_wolfe, LineSearchOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + serde::de::DeserializeOwned"))]
pub struct MinimizeOptions<T: Real> {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Stop when the max-norm of the (projected) gradient drops below this.
    pub grad_tol: T,
    pub max_iters: usize,
    pub wolfe_c1: T,
    pub wolfe_c2: T,
    /// Stop when an accepted step lowers `f` by less than
    /// `f_rel_tol · max(|f|, 1)`. Zero disables the test.
    pub f_rel_tol: T,
    /// Per-coordinate `[lo, hi]` box.
    pub bounds: Option<Vec<(T, T)>>,
}

impl<T: Real> Default for MinimizeOptions<T> {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: T::lit(1e-8),
            max_iters: 5000,
            wolfe_c1: T::lit(1e-4),
            wolfe_c2: T::lit(0.9),
            f_rel_tol: T::zero(),
            bounds: None,
        }
    }
}

impl<T: Real> MinimizeOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if self.memory < 1 {
            return Err(Error::invalid("optimizer.memory", "memory must be at least 1"));
        }
        let (c1, c2) = (self.wolfe_c1, self.wolfe_c2);
        if !(T::zero() < c1 && c1 < c2 && c2 < T::one()) {
            return Err(Error::invalid(
                "optimizer.wolfe_c1",
                "need 0 < wolfe_c1 < wolfe_c2 < 1",
            ));
        }
        if !(self.grad_tol >= T::zero()) || !(self.f_rel_tol >= T::zero()) {
            return Err(Error::invalid("optimizer.grad_tol", "tolerances must be nonnegative"));
        }
        if let Some(b) = &self.bounds {
            if b.iter().any(|&(lo, hi)| !(lo <= hi)) {
                return Err(Error::invalid("optimizer.bounds", "each bound needs lo <= hi"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimizeStatus {
    Converged,
    /// Relative decrease fell below `f_rel_tol`.
    FunctionTolerance,
    MaxIters,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult<T> {
    pub x_star: Vec<T>,
    pub f_star: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: MinimizeStatus,
}

struct Evaluator<'a, T, F> {
    objective: &'a mut F,
    evaluations: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real, F: FnMut(&[T], &mut [T]) -> T> Evaluator<'_, T, F> {
    fn eval(&mut self, x: &[T], g: &mut [T]) -> T {
        self.evaluations += 1;
        (self.objective)(x, g)
    }
}

fn project<T: Real>(x: &mut [T], bounds: &Option<Vec<(T, T)>>) {
    if let Some(b) = bounds {
        for (xi, &(lo, hi)) in x.iter_mut().zip(b) {
            *xi = xi.max(lo).min(hi);
        }
    }
}

/// Coordinates pinned at a bound with the gradient pushing outward.
fn active_set<T: Real>(x: &[T], g: &[T], bounds: &Option<Vec<(T, T)>>) -> Vec<bool> {
    match bounds {
        None => vec![false; x.len()],
        Some(b) => x
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&xi, &gi), &(lo, hi))| (xi <= lo && gi > T::zero()) || (xi >= hi && gi < T::zero()))
            .collect(),
    }
}

/// Largest step along `d` that stays inside the box.
fn max_feasible_step<T: Real>(x: &[T], d: &[T], bounds: &Option<Vec<(T, T)>>) -> T {
    let mut step = T::infinity();
    if let Some(b) = bounds {
        for ((&xi, &di), &(lo, hi)) in x.iter().zip(d).zip(b) {
            if di < T::zero() {
                step = step.min((lo - xi) / di);
            } else if di > T::zero() {
                step = step.min((hi - xi) / di);
            }
        }
    }
    step.max(T::zero())
}

/// Two-loop recursion: `d = -H g`.
fn lbfgs_direction<T: Real>(g: &[T], history: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q: Vec<T> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes a smooth objective. `objective(x, grad)` returns `f(x)` and
/// writes `∇f(x)` into `grad`.
///
/// Errors only when the objective is non-finite at the (projected) start
/// point or the options are invalid; line-search trouble is reported through
/// [`MinimizeStatus`] together with the best point found.
pub fn minimize<T, F>(mut objective: F, x0: &[T], opts: &MinimizeOptions<T>) -> Result<MinimizeResult<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> T,
{
    opts.validate()?;
    if let Some(b) = &opts.bounds {
        Error::check_len("optimizer bounds", x0.len(), b.len())?;
    }
    if !all_finite(x0) {
        return Err(Error::NonFinite("optimizer start point"));
    }
    let n = x0.len();
    let mut ev = Evaluator {
        objective: &mut objective,
        evaluations: 0,
        _marker: std::marker::PhantomData,
    };
    let mut x = x0.to_vec();
    project(&mut x, &opts.bounds);
    let mut g = vec![T::zero(); n];
    let mut f = ev.eval(&x, &mut g);
    if !f.is_finite() || !all_finite(&g) {
        return Err(Error::NonFinite("objective at start point"));
    }

    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut g_new = vec![T::zero(); n];
    let mut x_new = vec![T::zero(); n];
    let mut iterations = 0;
    let status = loop {
        let active = active_set(&x, &g, &opts.bounds);
        let pg: Vec<T> = g
            .iter()
            .zip(&active)
            .map(|(&gi, &a)| if a { T::zero() } else { gi })
            .collect();
        if max_abs(&pg) <= opts.grad_tol {
            break MinimizeStatus::Converged;
        }
        if iterations >= opts.max_iters {
            break MinimizeStatus::MaxIters;
        }

        let mut d = lbfgs_direction(&pg, &history);
        d.iter_mut().zip(&active).for_each(|(di, &a)| {
            if a {
                *di = T::zero();
            }
        });
        let mut slope = dot(&pg, &d);
        if !(slope < T::zero()) || !all_finite(&d) {
            history.clear();
            d = pg.iter().map(|&v| -v).collect();
            slope = dot(&pg, &d);
        }

        let outcome = loop {
            let alpha_init = if history.is_empty() {
                T::one().min(T::one() / dot(&d, &d).sqrt())
            } else {
                T::one()
            };
            let alpha_max = max_feasible_step(&x, &d, &opts.bounds);
            let outcome = strong_wolfe(
                |alpha, xs: &mut Vec<T>, gs: &mut Vec<T>| {
                    for i in 0..n {
                        xs[i] = x[i] + alpha * d[i];
                    }
                    project(xs, &opts.bounds);
                    let fa = ev.eval(xs, gs);
                    (fa, dot(gs, &d))
                },
                f,
                slope,
                alpha_init.min(alpha_max),
                alpha_max,
                opts.wolfe_c1,
                opts.wolfe_c2,
                &mut x_new,
                &mut g_new,
            );
            match outcome {
                LineSearchOutcome::Failed { .. } if !history.is_empty() => {
                    history.clear();
                    d = pg.iter().map(|&v| -v).collect();
                    slope = dot(&pg, &d);
                }
                other => break other,
            }
        };

        match outcome {
            LineSearchOutcome::Accepted { f_new } => {
                iterations += 1;
                let mut s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                let mut y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
                let now_active = active_set(&x_new, &g_new, &opts.bounds);
                for i in 0..n {
                    if now_active[i] {
                        s[i] = T::zero();
                        y[i] = T::zero();
                    }
                }
                let sy = dot(&s, &y);
                if sy > T::epsilon() * dot(&y, &y) && sy > T::zero() {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, T::one() / sy));
                }
                let decrease = f - f_new;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                if opts.f_rel_tol > T::zero() && decrease <= opts.f_rel_tol * f.abs().max(T::one()) {
                    break MinimizeStatus::FunctionTolerance;
                }
            }
            LineSearchOutcome::Failed { best } => {
                if let Some((fb, xb, gb)) = best {
                    if fb < f {
                        f = fb;
                        x = xb;
                        g = gb;
                    }
                }
                break MinimizeStatus::LineSearchFailure;
            }
        }
    };

    let active = active_set(&x, &g, &opts.bounds);
    let grad_norm = g
        .iter()
        .zip(&active)
        .fold(T::zero(), |m, (&gi, &a)| if a { m } else { m.max(gi.abs()) });
    Ok(MinimizeResult {
        x_star: x,
        f_star: f,
        grad_norm,
        iterations,
        evaluations: ev.evaluations,
        status,
    })
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> T,
{
    if !(h > T::zero()) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let mut probe = x.to_vec();
    let two_h = h + h;
    Ok((0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / two_h
        })
        .collect())
}
