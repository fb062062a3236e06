//! Simulation of centralized, federated and split learning for small
//! neural networks, with communication accounting, evaluation metrics and
//! the dimension-budget privacy comparison.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
