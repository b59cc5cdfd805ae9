//! Bayesian mixture of piecewise-stationary spectral models for panels of
//! time series indexed by covariates.

pub mod component;
pub mod config;
pub mod distributions;
pub mod error;
pub mod lsbp;
pub mod model;
pub mod panel;
mod par;
pub mod predicate;
pub mod sampler;
pub mod simulate;
pub mod spectral;
pub mod store;
pub mod summary;

pub use error::{Error, Result};
pub use par::with_threads;
