//! Seeded, stream-separated random draws.
//!
//! Each consumer (an annealing branch, a data-generation task) owns one
//! [`RngStream`]. A stream is a ChaCha8 generator keyed by `seed` with the
//! ChaCha stream counter set to `stream_id`, so draws depend only on
//! `(seed, stream_id)` and never on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Well-known stream ids. Branch `k` of an annealing run uses
/// `BRANCH_BASE + k`.
pub mod streams {
    pub const TRUTH: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const WEIGHTS: u64 = 3;
    pub const PREDICTION: u64 = 4;
    pub const BRANCH_BASE: u64 = 1 << 20;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// `n` draws uniform on `[lo, hi)`.
    pub fn uniform_draw<T: Real>(&mut self, lo: T, hi: T, n: usize) -> Result<Vec<T>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(
                "range",
                format!("empty interval [{lo}, {hi})"),
            ));
        }
        let (lo64, hi64) = (lo.to_f64_lossy(), hi.to_f64_lossy());
        Ok((0..n)
            .map(|_| {
                let v = T::lit(self.rng.random_range(lo64..hi64));
                // rounding to a narrower type can land exactly on hi
                if v >= hi { lo } else { v }
            })
            .collect())
    }

    /// One uniform draw on `[lo, hi]`; a zero-width range returns `lo`.
    pub fn uniform_or_const<T: Real>(&mut self, lo: T, hi: T) -> Result<T> {
        if lo == hi && lo.is_finite() {
            Ok(lo)
        } else {
            Ok(self.uniform_draw(lo, hi, 1)?[0])
        }
    }

    /// `n` draws from `N(0, 1)`.
    pub fn standard_normal<T: Real>(&mut self, n: usize) -> Vec<T> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::lit(z)
            })
            .collect()
    }
}

/// Free-function form of [`RngStream::uniform_draw`].
pub fn uniform_draw<T: Real>(stream: &mut RngStream, lo: T, hi: T, n: usize) -> Result<Vec<T>> {
    stream.uniform_draw(lo, hi, n)
}
