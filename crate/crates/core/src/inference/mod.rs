//! Posterior computation: transforms, MAP, HMC and diagnostics.

pub mod diagnostics;
pub mod hmc;
pub mod map;
pub mod mcmc;
pub mod transform;
