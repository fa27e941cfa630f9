//! Preference-based instrumental variables for panel prescribing data.
//!
//! The crate has three layers:
//!
//! * [`numerics`] — regression engines (OLS, logistic, logistic mixed models
//!   by Laplace approximation). Pure and RNG-free.
//! * instrument construction and estimation (rule-based and model-based
//!   provider-preference instruments, two-stage least squares).
//! * a simulation harness that generates synthetic prescribing panels,
//!   imposes missingness, and evaluates every estimator over replications.

pub mod data;
pub mod error;
pub mod methods;
pub mod numerics;
pub mod pipeline;
pub mod sim;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::Error;
