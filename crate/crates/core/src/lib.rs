//! Variance-stabilized density estimation for tabular anomaly detection.
//!
//! An autoregressive model built from monotone CDF networks is fitted to
//! normal data under a negative log-likelihood penalized by the variance of
//! the log-density. Several models trained on random feature orders are
//! combined through the leading eigenvector of their score covariance, and the
//! negated combined log-likelihood is the anomaly score.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the CLI uses.

pub mod data;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod kv;
pub mod numerics;
pub mod pipeline;
pub mod scalar;
pub mod training;

pub use error::{Result, VsdeError};
pub use scalar::Scalar;

pub type Table = data::Table<f64>;
pub type ArModel = density::ArModel<f64>;
pub type ArConfig = density::ArConfig<f64>;
pub type MonotoneNetParams = density::MonotoneNetParams<f64>;
pub type StandardizationParams = data::StandardizationParams<f64>;
pub type TrainConfig = training::TrainConfig<f64>;
pub type EnsembleConfig = ensemble::EnsembleConfig<f64>;
pub type EnsembleModel = ensemble::EnsembleModel<f64>;
pub type RunConfig = pipeline::RunConfig<f64>;
