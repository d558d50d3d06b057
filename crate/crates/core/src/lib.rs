//! Simulation-based calibration for quantities of interest derived from
//! Bayesian model predictions.

pub mod calibration;
pub mod error;
pub mod gridstruct;
pub mod harness;
pub mod inference;
pub mod models;
pub mod qoi;
pub mod rngdist;
pub mod smooth;

pub use error::{Error, Result};
