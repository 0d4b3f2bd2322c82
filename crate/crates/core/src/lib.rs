//! Tail-averaged accelerated SGD for streaming least squares.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix it to `f64`.

pub mod error;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod oracle;
pub mod scalar;
pub mod solvers;
pub mod stats;
pub mod verify;

pub use error::{AsgdError, Result};
pub use scalar::Scalar;

pub type Distribution = model::DistributionSpec<f64>;
pub type Noise = model::NoiseModel<f64>;
pub type Instance = model::ProblemInstance<f64>;
pub type Params = model::AsgdParams<f64>;
pub type Constants = model::ParamConstants<f64>;
pub type Operators = operators::OperatorSet<f64>;
pub type Run = solvers::RunResult<f64>;
pub type Bound = solvers::BoundReport<f64>;
