//! Discrete-time maps on both sides of the time ↔ layer correspondence:
//! Lorenz96 advanced by classical RK4, and logistic perceptron layers.

pub mod lorenz96;
pub mod mlp;

pub use lorenz96::{Lorenz96Spec, Rk4Workspace};
pub use mlp::{Activation, LayerJacobians, MlpSpec, MlpWeights};
