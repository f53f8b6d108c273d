//! Broadcasting-mode ride-hailing market simulator with a learned,
//! per-grid dynamic matching-radius controller.
//!
//! The crate is organised bottom-up:
//!
//! - [`market`]: grids, time-of-day codes, orders, drivers and windowed metrics.
//! - [`demand`]: CSV trip ingestion, synthetic demand, feature normalisation.
//! - [`behavior`]: the logistic order-grabbing model and its trainer.
//! - [`sim`]: the discrete-time broadcasting simulator.
//! - [`nn`]: tensors, tape-based reverse-mode differentiation and the
//!   transformer-encoder predictor.
//! - [`multitask`]: loss-history based task weighting strategies and the trainer.
//! - [`radius`]: feature assembly, composite scoring and the radius controller.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the simulator and the
//! command-line harness use.

pub mod behavior;
pub mod demand;
pub mod error;
pub mod geo;
pub mod market;
pub mod multitask;
pub mod nn;
pub mod radius;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = nn::Tensor<f64>;
pub type TebParameters = nn::TebParameters<f64>;
pub type TebModel = nn::TebModel<f64>;
pub type Checkpoint = nn::Checkpoint<f64>;
pub type NormStats = demand::NormStats<f64>;
pub type AcceptanceModel = behavior::AcceptanceModel<f64>;

pub type FeatureSequence = nn::FeatureSequence<f64>;
pub type LossHistory = multitask::LossHistory<f64>;
pub type Dataset = multitask::Dataset<f64>;

