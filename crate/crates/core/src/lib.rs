//! A desk-scale laboratory for overparameterized residual ReLU networks
//! trained by full-batch gradient descent.
//!
//! The crate is organized bottom-up:
//!
//! * [`numkit`]: dense matrices, deterministic reductions, seeded streams,
//!   power iteration.
//! * [`model`]: the scaled-skip network, its plain baseline, interlayer
//!   operators and checkpoints.
//! * [`lossgrad`]: cross-entropy, the surrogate loss, closed-form gradients
//!   and a finite-difference oracle.
//! * [`data`]: margin-separable synthetic data from a random-features teacher.
//! * [`trainer`]: instrumented constant-step gradient descent.
//! * [`probes`]: one measurement per theoretical bound.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! scalar to `f64`, which is what the probes and the CLI use.

pub mod data;
pub mod error;
pub mod lossgrad;
pub mod model;
pub mod numkit;
pub mod probes;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = numkit::Matrix<f64>;
pub type NetworkParams = model::NetworkParams<f64>;
pub type ActivationTrace = model::ActivationTrace<f64>;
pub type BatchTrace = model::BatchTrace<f64>;
pub type GradientSet = lossgrad::GradientSet<f64>;
pub type LabeledBatch = lossgrad::LabeledBatch<f64>;
pub type Teacher = data::Teacher<f64>;
pub type MarginDataset = data::MarginDataset<f64>;
pub type TrainOutcome = trainer::TrainOutcome<f64>;
