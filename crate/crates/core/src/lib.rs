//! Data-driven predictive control of grid-following inverters.
//!
//! The crate estimates a causal multistep output predictor directly from
//! input/output data, uses it inside a receding-horizon second-order-cone
//! program, and provides a behavioral (DeePC) baseline and a discrete-time
//! inverter plant for closed-loop experiments.

pub mod error;
pub mod hankel;
mod linalg;
pub mod predictor;
pub mod solver;
pub mod controller;
pub mod sim;
pub mod deepc;

pub use error::{Result, TpcError};
