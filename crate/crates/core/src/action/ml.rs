use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::mlp::{activation, activation_derivative};
use crate::models::{MlpSpec, MlpWeights};
use crate::scalar::Real;
use crate::types::Path;

use super::{ActionBreakdown, ActionProblem};

/// `M` input/output training pairs observed on `L` of the `N` neurons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlBatch<T> {
    /// Row-major `[M][L]` data at the input layer.
    pub inputs: Vec<T>,
    /// Row-major `[M][L]` data at the output layer.
    pub outputs: Vec<T>,
    pub observed_indices: Vec<usize>,
}

impl<T: Real> MlBatch<T> {
    pub fn n_pairs(&self) -> usize {
        if self.observed_indices.is_empty() {
            0
        } else {
            self.inputs.len() / self.observed_indices.len()
        }
    }

    pub fn n_observed(&self) -> usize {
        self.observed_indices.len()
    }

    pub fn input(&self, k: usize) -> &[T] {
        let l = self.n_observed();
        &self.inputs[k * l..(k + 1) * l]
    }

    pub fn output(&self, k: usize) -> &[T] {
        let l = self.n_observed();
        &self.outputs[k * l..(k + 1) * l]
    }

    pub fn validate(&self, n_neurons: usize) -> Result<()> {
        let l = self.n_observed();
        if l == 0 || l > n_neurons {
            return Err(Error::invalid(
                "observations.observed_indices",
                format!("need 1 <= L <= N = {n_neurons}, got {l}"),
            ));
        }
        if let Some(&bad) = self.observed_indices.iter().find(|&&i| i >= n_neurons) {
            return Err(Error::invalid(
                "observations.observed_indices",
                format!("index out of range: {bad}"),
            ));
        }
        let mut sorted = self.observed_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != l {
            return Err(Error::invalid("observations.observed_indices", "indices must be distinct"));
        }
        if self.inputs.is_empty() || !self.inputs.len().is_multiple_of(l) {
            return Err(Error::invalid("batch.inputs", "need M >= 1 complete input rows"));
        }
        Error::check_len("batch outputs", self.inputs.len(), self.outputs.len())
    }
}

/// The unknowns of a network problem: layer states for each training pair
/// plus the shared weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkPath<T> {
    pub paths: Vec<Path<T>>,
    pub weights: MlpWeights<T>,
}

impl<T: Real> NetworkPath<T> {
    /// Pair states in order, then the flattened weights.
    pub fn to_vector(&self) -> Vec<T> {
        let mut v: Vec<T> = self
            .paths
            .iter()
            .flat_map(|p| p.states().iter().copied())
            .collect();
        v.extend(self.weights.to_flat());
        v
    }

    pub fn from_vector(x: &[T], spec: &MlpSpec, m: usize) -> Result<Self> {
        let per = spec.n_layers * spec.n_neurons;
        Error::check_len("network vector", m * per + spec.n_weights(), x.len())?;
        let paths = (0..m)
            .map(|k| Path::from_vector(&x[k * per..(k + 1) * per], spec.n_layers, spec.n_neurons))
            .collect::<Result<Vec<_>>>()?;
        let weights = MlpWeights::from_flat(spec, &x[m * per..])?;
        Ok(Self { paths, weights })
    }
}

/// Layered action
///
/// `A_M = (1/M) Σ_k { R_m/(2L) Σ_r [(x_r(l_0) − y_r(l_0))² + (x_r(l_F) − y_r(l_F))²]
///                   + R_f/(N(l_F − 1)) Σ_l Σ_a [x_a(l+1) − g(W(l)x(l))_a]² }`
#[derive(Clone, Debug)]
pub struct MlAction<T: Real> {
    batch: MlBatch<T>,
    spec: MlpSpec,
    rm: T,
}

impl<T: Real> MlAction<T> {
    pub fn new(batch: MlBatch<T>, spec: MlpSpec, rm: T) -> Result<Self> {
        batch.validate(spec.n_neurons)?;
        if !(rm >= T::zero()) {
            return Err(Error::invalid("observations.rm", "rm must be nonnegative"));
        }
        Ok(Self { batch, spec, rm })
    }

    pub fn batch(&self) -> &MlBatch<T> {
        &self.batch
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Expected measurement term when `R_m = 1/σ²`: every pair carries `2L`
    /// residuals of variance `σ²`, normalized to one.
    pub fn expected_measurement_level(&self) -> T {
        if self.rm > T::zero() {
            T::one()
        } else {
            T::zero()
        }
    }

    fn per_pair(&self) -> usize {
        self.spec.n_layers * self.spec.n_neurons
    }

    fn n_state_vars(&self) -> usize {
        self.batch.n_pairs() * self.per_pair()
    }

    pub fn to_network(&self, x: &[T]) -> NetworkPath<T> {
        NetworkPath::from_vector(x, &self.spec, self.batch.n_pairs()).expect("vector length")
    }

    fn check(&self, net: &NetworkPath<T>) -> Result<()> {
        Error::check_len("training pairs", self.batch.n_pairs(), net.paths.len())?;
        for p in &net.paths {
            Error::check_len("layer width", self.spec.n_neurons, p.dim())?;
            Error::check_len("layer count", self.spec.n_layers, p.n_slots())?;
        }
        Error::check_len("weight layers", self.spec.n_weight_layers(), net.weights.layers.len())
    }

    fn run(&self, x: &[T], rf: T, mut grad: Option<&mut [T]>) -> ActionBreakdown<T> {
        let n = self.spec.n_neurons;
        let lf = self.spec.n_layers;
        let m = self.batch.n_pairs();
        let l = self.batch.n_observed();
        let per = self.per_pair();
        let w_off = self.n_state_vars();
        debug_assert_eq!(x.len(), w_off + self.spec.n_weights());
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }

        let inv_m = T::one() / T::from_usize_lossy(m);
        let meas_coef = self.rm / (T::lit(2.0) * T::from_usize_lossy(l)) * inv_m;
        let model_coef = rf / T::from_usize_lossy(n * (lf - 1)) * inv_m;
        let two = T::lit(2.0);

        let mut meas = T::zero();
        let mut model = T::zero();
        let mut z = vec![T::zero(); n];
        let mut delta = vec![T::zero(); n];
        for k in 0..m {
            let base = k * per;
            let xs = &x[base..base + per];
            for (r, &idx) in self.batch.observed_indices.iter().enumerate() {
                let e_in = xs[idx] - self.batch.input(k)[r];
                let e_out = xs[(lf - 1) * n + idx] - self.batch.output(k)[r];
                meas += meas_coef * (e_in * e_in + e_out * e_out);
                if let Some(g) = grad.as_deref_mut() {
                    g[base + idx] += two * meas_coef * e_in;
                    g[base + (lf - 1) * n + idx] += two * meas_coef * e_out;
                }
            }
            for layer in 0..lf - 1 {
                let w = &x[w_off + layer * n * n..w_off + (layer + 1) * n * n];
                let xl = &xs[layer * n..(layer + 1) * n];
                let xn = &xs[(layer + 1) * n..(layer + 2) * n];
                for j in 0..n {
                    z[j] = crate::scalar::dot(&w[j * n..(j + 1) * n], xl);
                }
                for j in 0..n {
                    let e = xn[j] - activation(z[j]);
                    model += model_coef * e * e;
                    delta[j] = -two * model_coef * e * activation_derivative(z[j]);
                    if let Some(g) = grad.as_deref_mut() {
                        g[base + (layer + 1) * n + j] += two * model_coef * e;
                    }
                }
                if let Some(g) = grad.as_deref_mut() {
                    for j in 0..n {
                        let dj = delta[j];
                        if dj == T::zero() {
                            continue;
                        }
                        for i in 0..n {
                            g[base + layer * n + i] += w[j * n + i] * dj;
                            g[w_off + layer * n * n + j * n + i] += dj * xl[i];
                        }
                    }
                }
            }
        }
        ActionBreakdown::new(meas, model, rf, self.rm)
    }

    pub fn action(&self, net: &NetworkPath<T>, rf: T) -> Result<ActionBreakdown<T>> {
        self.check(net)?;
        Ok(self.run(&net.to_vector(), rf, None))
    }

    pub fn gradient(&self, net: &NetworkPath<T>, rf: T) -> Result<Vec<T>> {
        self.check(net)?;
        let x = net.to_vector();
        let mut g = vec![T::zero(); x.len()];
        self.run(&x, rf, Some(&mut g));
        Ok(g)
    }
}

impl<T: Real> ActionProblem<T> for MlAction<T> {
    fn n_vars(&self) -> usize {
        self.n_state_vars() + self.spec.n_weights()
    }

    fn rm(&self) -> T {
        self.rm
    }

    fn evaluate(&self, x: &[T], rf: T) -> ActionBreakdown<T> {
        self.run(x, rf, None)
    }

    fn evaluate_with_gradient(&self, x: &[T], rf: T, grad: &mut [T]) -> ActionBreakdown<T> {
        self.run(x, rf, Some(grad))
    }
}

pub fn action_ml<T: Real>(
    net: &NetworkPath<T>,
    batch: &MlBatch<T>,
    spec: &MlpSpec,
    rm: T,
    rf: T,
) -> Result<ActionBreakdown<T>> {
    MlAction::new(batch.clone(), spec.clone(), rm)?.action(net, rf)
}

pub fn action_ml_gradient<T: Real>(
    net: &NetworkPath<T>,
    batch: &MlBatch<T>,
    spec: &MlpSpec,
    rm: T,
    rf: T,
) -> Result<Vec<T>> {
    MlAction::new(batch.clone(), spec.clone(), rm)?.gradient(net, rf)
}
