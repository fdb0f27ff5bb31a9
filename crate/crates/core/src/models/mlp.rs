//! Feedforward layers `x_j(l+1) = g(Σ_i W_ji(l) x_i(l))` with the logistic
//! activation `g(z) = ½(1 + tanh(z/2))`. No bias terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    LogisticTanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub n_neurons: usize,
    /// Total layer count `l_F`, input and output included.
    pub n_layers: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(n_neurons: usize, n_layers: usize) -> Result<Self> {
        if n_neurons == 0 {
            return Err(Error::invalid("model.n_neurons", "need at least one neuron"));
        }
        if n_layers < 2 {
            return Err(Error::invalid("model.n_layers", "need input and output layers"));
        }
        Ok(Self {
            n_neurons,
            n_layers,
            activation: Activation::LogisticTanh,
        })
    }

    pub fn n_weight_layers(&self) -> usize {
        self.n_layers - 1
    }

    pub fn n_weights(&self) -> usize {
        self.n_weight_layers() * self.n_neurons * self.n_neurons
    }
}

#[inline]
pub fn activation<T: Real>(z: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (z * half).tanh())
}

/// `g'(z) = g(z)(1 - g(z))`.
#[inline]
pub fn activation_derivative<T: Real>(z: T) -> T {
    let g = activation(z);
    g * (T::one() - g)
}

/// Weight matrices `W(0) … W(l_F − 2)`; `W(l)` maps layer `l` to `l + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights<T> {
    pub layers: Vec<Matrix<T>>,
}

impl<T: Real> MlpWeights<T> {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: (0..spec.n_weight_layers())
                .map(|_| Matrix::zeros(spec.n_neurons, spec.n_neurons))
                .collect(),
        }
    }

    /// Splits a flat vector laid out layer by layer, row-major.
    pub fn from_flat(spec: &MlpSpec, flat: &[T]) -> Result<Self> {
        Error::check_len("flat weights", spec.n_weights(), flat.len())?;
        let n = spec.n_neurons;
        Ok(Self {
            layers: flat
                .chunks(n * n)
                .map(|c| Matrix::from_row_major(n, n, c.to_vec()))
                .collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Propagates an input through every layer; returns all layer states.
    pub fn forward(&self, input: &[T]) -> Result<Vec<Vec<T>>> {
        let mut states = vec![input.to_vec()];
        for w in &self.layers {
            let next = layer_map(states.last().expect("non-empty"), w)?;
            states.push(next);
        }
        Ok(states)
    }
}

fn check_shape<T: Real>(x_prev: &[T], w: &Matrix<T>) -> Result<()> {
    Error::check_len("weight columns", x_prev.len(), w.cols())?;
    Error::check_len("weight rows", x_prev.len(), w.rows())
}

/// Component `j` is `g(Σ_i w_ji · x_prev_i)`.
pub fn layer_map<T: Real>(x_prev: &[T], w: &Matrix<T>) -> Result<Vec<T>> {
    check_shape(x_prev, w)?;
    Ok(w.mul_vec(x_prev).into_iter().map(activation).collect())
}

/// Derivatives of one layer map.
///
/// `d_out_d_w[(j, i)]` is `∂out_j/∂w_ji`; every other entry of the rank-3
/// sensitivity `∂out_j/∂w_ki` with `k ≠ j` is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerJacobians<T> {
    pub d_out_d_x: Matrix<T>,
    pub d_out_d_w: Matrix<T>,
}

pub fn layer_jacobians<T: Real>(x_prev: &[T], w: &Matrix<T>) -> Result<LayerJacobians<T>> {
    check_shape(x_prev, w)?;
    let n = x_prev.len();
    let z = w.mul_vec(x_prev);
    let mut d_out_d_x = Matrix::zeros(n, n);
    let mut d_out_d_w = Matrix::zeros(n, n);
    for j in 0..n {
        let gp = activation_derivative(z[j]);
        for i in 0..n {
            d_out_d_x[(j, i)] = gp * w[(j, i)];
            d_out_d_w[(j, i)] = gp * x_prev[i];
        }
    }
    Ok(LayerJacobians {
        d_out_d_x,
        d_out_d_w,
    })
}
