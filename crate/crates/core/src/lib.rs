//! Kalman filtering over lossy sensor links and base-station placement.
//!
//! Sensors observe a linear Gaussian process and send their measurements
//! to a base station over links that drop packets with a probability that
//! grows with distance. The crate computes the exact one-step expected error
//! covariance for a given base location, searches for the location that
//! minimizes it, checks the matrix concavity that pushes optima onto sensor
//! positions, and cross-checks everything by Monte Carlo simulation.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expectation;
pub mod filter;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod placement;
pub mod scalar;

pub use error::{Error, Result};
pub use linalg::{Definiteness, PsdTolerance};
pub use model::{Point, Region, SensorSubset};
pub use scalar::Real;

pub type CovMatrix = linalg::CovMatrix<f64>;
pub type LinearSystem = model::LinearSystem<f64>;
pub type Sensor = model::Sensor<f64>;
pub type LossModel = model::LossModel<f64>;
pub type Scenario = model::Scenario<f64>;
pub type FilterState = filter::FilterState<f64>;
pub type StepResult = filter::StepResult<f64>;
pub type TwoSensorTerms = expectation::TwoSensorTerms<f64>;
pub type PlacementResult = placement::PlacementResult<f64>;
pub type ConcavityReport = placement::ConcavityReport<f64>;
pub type SimConfig = montecarlo::SimConfig<f64>;
pub type TrajectoryRecord = montecarlo::TrajectoryRecord<f64>;

pub type CovMatrix32 = linalg::CovMatrix<f32>;
pub type Scenario32 = model::Scenario<f32>;
