//! Bracketing and zoom line search for the strong Wolfe conditions, with
//! safeguarded cubic interpolation.

use crate::scalar::Real;

const MAX_BRACKET: usize = 30;
const MAX_ZOOM: usize = 40;
const F_ROUNDOFF: f64 = 1e-13;

pub(super) enum LineSearchOutcome<T> {
    Accepted { f_new: T },
    /// No strong Wolfe point found; carries the lowest trial point that
    /// decreased `f`, if any.
    Failed { best: Option<(T, Vec<T>, Vec<T>)> },
}

#[derive(Clone)]
struct Trial<T> {
    a: T,
    f: T,
    dphi: T,
    x: Vec<T>,
    g: Vec<T>,
}

fn cubic_min<T: Real>(lo: &Trial<T>, hi: &Trial<T>) -> Option<T> {
    let three = T::lit(3.0);
    let two = T::lit(2.0);
    let (a0, a1) = (lo.a, hi.a);
    let d1 = lo.dphi + hi.dphi - three * (lo.f - hi.f) / (a0 - a1);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if !(disc >= T::zero()) {
        return None;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let a = a1 - (a1 - a0) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + two * d2);
    a.is_finite().then_some(a)
}

struct Search<'a, T, P> {
    phi: P,
    f0: T,
    d0: T,
    c1: T,
    c2: T,
    xs: Vec<T>,
    gs: Vec<T>,
    best: Option<Trial<T>>,
    x_out: &'a mut Vec<T>,
    g_out: &'a mut Vec<T>,
}

impl<T: Real, P: FnMut(T, &mut Vec<T>, &mut Vec<T>) -> (T, T)> Search<'_, T, P> {
    fn probe(&mut self, a: T) -> Trial<T> {
        let (f, dphi) = (self.phi)(a, &mut self.xs, &mut self.gs);
        let t = Trial {
            a,
            f,
            dphi,
            x: self.xs.clone(),
            g: self.gs.clone(),
        };
        if f.is_finite() && f < self.f0 && self.best.as_ref().is_none_or(|b| f < b.f) {
            self.best = Some(t.clone());
        }
        t
    }

    fn armijo_fails(&self, t: &Trial<T>) -> bool {
        t.f > self.f0 + self.c1 * t.a * self.d0
    }

    fn curvature_ok(&self, t: &Trial<T>) -> bool {
        t.dphi.abs() <= -self.c2 * self.d0
    }

    /// Curvature holds and `f` did not increase beyond its round-off. Near a
    /// minimizer the Armijo decrease drops below round-off while this test
    /// still resolves.
    fn approximate_wolfe(&self, t: &Trial<T>) -> bool {
        t.f <= self.f0 + T::lit(F_ROUNDOFF) * self.f0.abs() && self.curvature_ok(t)
    }

    fn accept(&mut self, t: Trial<T>) -> LineSearchOutcome<T> {
        *self.x_out = t.x;
        *self.g_out = t.g;
        LineSearchOutcome::Accepted { f_new: t.f }
    }

    fn fail(&mut self) -> LineSearchOutcome<T> {
        LineSearchOutcome::Failed {
            best: self.best.take().map(|t| (t.f, t.x, t.g)),
        }
    }

    fn zoom(&mut self, mut lo: Trial<T>, mut hi: Trial<T>) -> LineSearchOutcome<T> {
        let tenth = T::lit(0.1);
        for _ in 0..MAX_ZOOM {
            let (left, right) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
            let width = right - left;
            if width <= T::epsilon() * right.max(T::epsilon()) {
                break;
            }
            let mid = (left + right) * T::lit(0.5);
            let a = match cubic_min(&lo, &hi) {
                Some(a) if a >= left + tenth * width && a <= right - tenth * width => a,
                _ => mid,
            };
            let t = self.probe(a);
            if !t.f.is_finite() || !t.dphi.is_finite() {
                hi = t;
                hi.f = T::infinity();
                hi.dphi = T::zero();
                continue;
            }
            if self.approximate_wolfe(&t) {
                return self.accept(t);
            }
            if self.armijo_fails(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature_ok(&t) {
                    return self.accept(t);
                }
                if t.dphi * (hi.a - lo.a) >= T::zero() {
                    hi = lo;
                }
                lo = t;
            }
        }
        self.fail()
    }
}

/// Finds a step `a ∈ (0, alpha_max]` satisfying the strong Wolfe conditions
/// for `φ(a) = f(x + a d)`. `phi(a, x, g)` writes the trial point and its
/// gradient and returns `(φ(a), φ'(a))`. A step clipped at `alpha_max`
/// (a bound) is accepted on sufficient decrease alone.
#[allow(clippy::too_many_arguments)]
pub(super) fn strong_wolfe<T, P>(
    phi: P,
    f0: T,
    d0: T,
    alpha_init: T,
    alpha_max: T,
    c1: T,
    c2: T,
    x_out: &mut Vec<T>,
    g_out: &mut Vec<T>,
) -> LineSearchOutcome<T>
where
    T: Real,
    P: FnMut(T, &mut Vec<T>, &mut Vec<T>) -> (T, T),
{
    let n = x_out.len();
    let mut s = Search {
        phi,
        f0,
        d0,
        c1,
        c2,
        xs: vec![T::zero(); n],
        gs: vec![T::zero(); n],
        best: None,
        x_out,
        g_out,
    };
    if !(alpha_max > T::zero()) || !(alpha_init > T::zero()) {
        return s.fail();
    }
    let mut prev = Trial {
        a: T::zero(),
        f: f0,
        dphi: d0,
        x: Vec::new(),
        g: Vec::new(),
    };
    let mut a = alpha_init;
    for i in 0..MAX_BRACKET {
        let t = s.probe(a);
        if !t.f.is_finite() || !t.dphi.is_finite() {
            // overflowed: pull back toward the last good step
            a = prev.a + (a - prev.a) * T::lit(0.25);
            if a - prev.a <= T::epsilon() * a {
                break;
            }
            continue;
        }
        if s.approximate_wolfe(&t) {
            return s.accept(t);
        }
        if s.armijo_fails(&t) || (i > 0 && t.f >= prev.f) {
            return s.zoom(prev, t);
        }
        if s.curvature_ok(&t) {
            return s.accept(t);
        }
        if t.dphi >= T::zero() {
            return s.zoom(t, prev);
        }
        if a >= alpha_max {
            return s.accept(t);
        }
        prev = t;
        a = (a * T::lit(2.0)).min(alpha_max);
    }
    s.fail()
}
