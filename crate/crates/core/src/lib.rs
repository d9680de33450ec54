//! Bayesian funnel-threshold models for multi-stage decision data with
//! selectively censored outcomes.

pub mod baselines;
pub mod dataio;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod riskdist;
pub mod simulate;

pub use error::{FunnelError, Result};
