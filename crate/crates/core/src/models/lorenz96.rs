//! Lorenz96 vector field `F_a = x_{a-1}(x_{a+1} - x_{a-2}) - x_a + ν` on a
//! periodic lattice, its Jacobian, and the RK4 map used as the discrete model.
//!
//! Components are indexed `0..D` and wrap cyclically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96Spec<T> {
    pub dim: usize,
    /// Forcing ν. When `forcing_unknown` is set this is only the value used to
    /// generate twin data; the estimate lives in the path parameters.
    pub forcing: T,
    #[serde(default)]
    pub forcing_unknown: bool,
}

impl<T: Real> Lorenz96Spec<T> {
    pub fn new(dim: usize, forcing: T) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            forcing,
            forcing_unknown: false,
        })
    }

    pub fn with_unknown_forcing(mut self) -> Self {
        self.forcing_unknown = true;
        self
    }

    /// Number of unknown parameters carried by a path.
    pub fn n_params(&self) -> usize {
        usize::from(self.forcing_unknown)
    }

    /// ν for a path: the path's estimate if unknown, the fixed value otherwise.
    pub fn forcing_for(&self, params: &[T]) -> T {
        if self.forcing_unknown {
            params[0]
        } else {
            self.forcing
        }
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 4 {
        Err(Error::invalid(
            "model.dim",
            format!("Lorenz96 needs D >= 4, got {d}"),
        ))
    } else {
        Ok(())
    }
}

#[inline]
fn wrap(i: isize, d: usize) -> usize {
    i.rem_euclid(d as isize) as usize
}

/// Unchecked kernel; `out.len() == x.len() >= 4`.
#[inline]
pub fn vector_field_into<T: Real>(x: &[T], nu: T, out: &mut [T]) {
    let d = x.len();
    for a in 0..d {
        let am1 = x[(a + d - 1) % d];
        let am2 = x[(a + d - 2) % d];
        let ap1 = x[(a + 1) % d];
        out[a] = am1 * (ap1 - am2) - x[a] + nu;
    }
}

pub fn vector_field<T: Real>(x: &[T], nu: T) -> Result<Vec<T>> {
    check_dim(x.len())?;
    let mut out = vec![T::zero(); x.len()];
    vector_field_into(x, nu, &mut out);
    Ok(out)
}

/// `∂F_a/∂x_b`; at most four nonzeros per row.
pub fn jacobian<T: Real>(x: &[T], _nu: T) -> Result<Matrix<T>> {
    let d = x.len();
    check_dim(d)?;
    let mut j = Matrix::zeros(d, d);
    for a in 0..d {
        let ia = a as isize;
        let (m1, m2, p1) = (wrap(ia - 1, d), wrap(ia - 2, d), wrap(ia + 1, d));
        j[(a, m1)] += x[p1] - x[m2];
        j[(a, p1)] += x[m1];
        j[(a, m2)] -= x[m1];
        j[(a, a)] -= T::one();
    }
    Ok(j)
}

/// Tangent map `out = DF(x)·v`.
#[inline]
pub fn jvp_into<T: Real>(x: &[T], v: &[T], out: &mut [T]) {
    let d = x.len();
    for a in 0..d {
        let (m1, m2, p1) = ((a + d - 1) % d, (a + d - 2) % d, (a + 1) % d);
        out[a] = (x[p1] - x[m2]) * v[m1] + x[m1] * (v[p1] - v[m2]) - v[a];
    }
}

/// Adjoint map `out += DF(x)ᵀ·u`.
#[inline]
pub fn vjp_accumulate<T: Real>(x: &[T], u: &[T], out: &mut [T]) {
    let d = x.len();
    for a in 0..d {
        let (m1, m2, p1) = ((a + d - 1) % d, (a + d - 2) % d, (a + 1) % d);
        let ua = u[a];
        out[m1] += ua * (x[p1] - x[m2]);
        out[p1] += ua * x[m1];
        out[m2] -= ua * x[m1];
        out[a] -= ua;
    }
}

/// Scratch space for one RK4 step and its derivatives. Reusing a workspace
/// keeps the action gradient allocation-free.
#[derive(Clone, Debug)]
pub struct Rk4Workspace<T> {
    dim: usize,
    // stage evaluation points x, x2, x3, x4 and slopes k1..k4
    pts: [Vec<T>; 4],
    ks: [Vec<T>; 4],
    bar_k: [Vec<T>; 4],
    bar_pt: Vec<T>,
}

impl<T: Real> Rk4Workspace<T> {
    pub fn new(dim: usize) -> Self {
        let z = || vec![T::zero(); dim];
        Self {
            dim,
            pts: [z(), z(), z(), z()],
            ks: [z(), z(), z(), z()],
            bar_k: [z(), z(), z(), z()],
            bar_pt: z(),
        }
    }

    /// Advances `x` by one step into `out`, keeping the stages for a
    /// subsequent [`Rk4Workspace::vjp`].
    pub fn step(&mut self, x: &[T], nu: T, dt: T, out: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim);
        let half = dt * T::lit(0.5);
        let coef = [half, half, dt];
        self.pts[0].copy_from_slice(x);
        for s in 0..4 {
            let (pts, ks) = (&mut self.pts, &mut self.ks);
            vector_field_into(&pts[s], nu, &mut ks[s]);
            if s < 3 {
                let c = coef[s];
                for i in 0..self.dim {
                    pts[s + 1][i] = x[i] + c * ks[s][i];
                }
            }
        }
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        for i in 0..self.dim {
            out[i] = x[i]
                + sixth * (self.ks[0][i] + two * self.ks[1][i] + two * self.ks[2][i] + self.ks[3][i]);
        }
    }

    /// Reverse-mode sensitivity of the last [`Rk4Workspace::step`]: given the
    /// cotangent `u` on its output, adds `(∂step/∂x)ᵀu` into `grad_x` and
    /// returns `(∂step/∂ν)·u`.
    pub fn vjp(&mut self, u: &[T], dt: T, grad_x: &mut [T]) -> T {
        let sixth = dt / T::lit(6.0);
        let third = dt / T::lit(3.0);
        let half = dt * T::lit(0.5);
        let weights = [sixth, third, third, sixth];
        for (bar, &w) in self.bar_k.iter_mut().zip(&weights) {
            for (b, &ui) in bar.iter_mut().zip(u) {
                *b = w * ui;
            }
        }
        for (g, &ui) in grad_x.iter_mut().zip(u) {
            *g += ui;
        }
        let mut grad_nu = T::zero();
        // stage s evaluated F at pts[s] = x + c_s * k_{s-1}
        let coef = [T::zero(), half, half, dt];
        for s in (0..4).rev() {
            grad_nu += self.bar_k[s].iter().copied().sum::<T>();
            self.bar_pt.iter_mut().for_each(|v| *v = T::zero());
            vjp_accumulate(&self.pts[s], &self.bar_k[s], &mut self.bar_pt);
            for (g, &b) in grad_x.iter_mut().zip(&self.bar_pt) {
                *g += b;
            }
            if s > 0 {
                let c = coef[s];
                for i in 0..self.dim {
                    self.bar_k[s - 1][i] += c * self.bar_pt[i];
                }
            }
        }
        grad_nu
    }
}

/// One classical RK4 step of the Lorenz96 flow.
pub fn rk4_step<T: Real>(x: &[T], nu: T, dt: T) -> Result<Vec<T>> {
    check_dim(x.len())?;
    let mut ws = Rk4Workspace::new(x.len());
    let mut out = vec![T::zero(); x.len()];
    ws.step(x, nu, dt, &mut out);
    Ok(out)
}

/// Exact Jacobian of [`rk4_step`] with respect to `x`, and its derivative
/// with respect to ν, by forward tangent propagation through the four stages.
pub fn rk4_step_jacobian<T: Real>(x: &[T], nu: T, dt: T) -> Result<(Matrix<T>, Vec<T>)> {
    let d = x.len();
    check_dim(d)?;
    let half = dt * T::lit(0.5);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);

    let mut pts = vec![x.to_vec()];
    let mut ks: Vec<Vec<T>> = Vec::with_capacity(4);
    for (s, c) in [half, half, dt, T::zero()].into_iter().enumerate() {
        let mut k = vec![T::zero(); d];
        vector_field_into(&pts[s], nu, &mut k);
        if s < 3 {
            pts.push(x.iter().zip(&k).map(|(&xi, &ki)| xi + c * ki).collect());
        }
        ks.push(k);
    }

    let mut jac = Matrix::zeros(d, d);
    let mut dnu = vec![T::zero(); d];
    // columns 0..d: unit perturbations of x; column d: unit perturbation of ν
    let mut dk = vec![vec![T::zero(); d]; 4];
    let mut dpt = vec![T::zero(); d];
    for col in 0..=d {
        let seed_x = |i: usize| if i == col { T::one() } else { T::zero() };
        let seed_nu = if col == d { T::one() } else { T::zero() };
        for s in 0..4 {
            for i in 0..d {
                dpt[i] = seed_x(i)
                    + match s {
                        0 => T::zero(),
                        1 | 2 => half * dk[s - 1][i],
                        _ => dt * dk[2][i],
                    };
            }
            let mut out = vec![T::zero(); d];
            jvp_into(&pts[s], &dpt, &mut out);
            for v in out.iter_mut() {
                *v += seed_nu;
            }
            dk[s] = out;
        }
        for i in 0..d {
            let v = seed_x(i) + sixth * (dk[0][i] + two * dk[1][i] + two * dk[2][i] + dk[3][i]);
            if col < d {
                jac[(i, col)] = v;
            } else {
                dnu[i] = v;
            }
        }
    }
    Ok((jac, dnu))
}

/// Integrates `n_steps` RK4 steps from `x0`; returns `n_steps + 1` states,
/// row-major.
pub fn integrate<T: Real>(x0: &[T], nu: T, dt: T, n_steps: usize) -> Result<Vec<T>> {
    let d = x0.len();
    check_dim(d)?;
    let mut ws = Rk4Workspace::new(d);
    let mut traj = Vec::with_capacity((n_steps + 1) * d);
    traj.extend_from_slice(x0);
    let mut next = vec![T::zero(); d];
    for n in 0..n_steps {
        ws.step(&traj[n * d..(n + 1) * d], nu, dt, &mut next);
        traj.extend_from_slice(&next);
    }
    Ok(traj)
}
