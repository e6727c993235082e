//! Two-view image classification with attention fusion, multi-view
//! distillation, and an adaptive teacher-freezing gate.
//!
//! The numeric core (tensors, ops, model, losses, gate) is generic over the
//! floating-point type through [`Scalar`]. Training and evaluation default to
//! `f64`; the aliases below name the concrete types used by the CLI.

pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod gate;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Distribution64 = numerics::Distribution<f64>;
pub type Model64 = model::Model<f64>;
pub type TrainState64 = trainer::TrainState<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Model32 = model::Model<f32>;

/// Number of distress classes.
pub const NUM_CLASSES: usize = 4;
