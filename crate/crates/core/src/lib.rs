//! Statistical data assimilation by variational annealing, applied both to
//! time series from a chaotic flow and to the layers of a feedforward network.
//!
//! The numerical core is generic over the scalar type through [`Real`]
//! (`f32` or `f64`); the aliases at the crate root fix it to `f64`, which is
//! what the experiment drivers and file formats use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod annealing;
pub mod deepest;
pub mod error;
pub mod experiment;
pub mod io;
pub mod matrix;
pub mod models;
pub mod optimizer;
pub mod rng;
pub mod scalar;
pub mod twin;
pub mod types;
pub mod validate;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Real;

pub type TimeGrid = types::TimeGrid<f64>;
pub type Path = types::Path<f64>;
pub type ObservationSet = types::ObservationSet<f64>;
pub type AnnealSchedule = types::AnnealSchedule<f64>;
pub type ActionLevelTable = types::ActionLevelTable<f64>;
pub type Lorenz96Spec = models::Lorenz96Spec<f64>;
pub type MlpWeights = models::MlpWeights<f64>;
pub type MlBatch = action::MlBatch<f64>;
pub type NetworkPath = action::NetworkPath<f64>;
pub type StandardAction = action::StandardAction<f64>;
pub type MlAction = action::MlAction<f64>;
pub type MinimizeOptions = optimizer::MinimizeOptions<f64>;
pub type MinimizeResult = optimizer::MinimizeResult<f64>;

pub use models::MlpSpec;
