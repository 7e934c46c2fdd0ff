//! Hopfield associative memories trained with Hebbian, linear-logistic,
//! kernel-logistic and kernel-ridge rules, with synchronous recall dynamics,
//! strict attractor classification and a deterministic sweep harness.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod learning;
pub mod model_io;
pub mod patterns;
pub mod report;
pub mod rng;
pub mod validate;

pub use error::{Error, Result};
