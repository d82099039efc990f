//! Discrete-time multistate logit models with Gaussian frailties for
//! repayment-state credit risk.

pub mod bootstrap;
pub mod classification;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod model;
pub mod optimize;
pub mod prediction;
pub mod quadrature;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
