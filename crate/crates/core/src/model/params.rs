use serde::{Deserialize, Serialize};

use super::FunnelConfig;
use crate::error::{FunnelError, Result};
use crate::riskdist::DELTA_MIN;

/// Upper limit of the first threshold.
pub const FIRST_THRESHOLD_MAX: f64 = 0.5;

/// Constrained model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    /// `t_1 < … < t_{K−1}`.
    pub thresholds: Vec<f64>,
    /// δ_k for each decision stage.
    pub deltas: Vec<f64>,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        1 + self.beta.len() + self.thresholds.len() + self.deltas.len()
    }

    pub fn validate(&self, config: &FunnelConfig) -> Result<()> {
        let fail = |msg: String| Err(FunnelError::InvalidParams(msg));
        if self.beta.len() != config.n_features() {
            return fail(format!(
                "beta has {} entries, config has {} features",
                self.beta.len(),
                config.n_features()
            ));
        }
        let stages = config.n_decision_stages();
        if self.thresholds.len() != stages || self.deltas.len() != stages {
            return fail(format!("expected {stages} thresholds and deltas"));
        }
        if !self.alpha.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return fail("alpha and beta must be finite".into());
        }
        let t1 = self.thresholds[0];
        if !(t1 > 0.0 && t1 <= FIRST_THRESHOLD_MAX) {
            return fail(format!("t_1 must lie in (0, 0.5], got {t1}"));
        }
        for w in self.thresholds.windows(2) {
            if !(w[1] > w[0] && w[1] < 1.0) {
                return fail(format!(
                    "thresholds must be strictly increasing below 1: {:?}",
                    self.thresholds
                ));
            }
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d >= DELTA_MIN && d.is_finite())) {
            return fail(format!("delta must be finite and >= {DELTA_MIN}, got {d}"));
        }
        Ok(())
    }

    /// Parameter names in flat order: `alpha`, `beta_<feature>`…, `t_k`…,
    /// `delta_k`….
    pub fn names(config: &FunnelConfig) -> Vec<String> {
        let stages = config.n_decision_stages();
        std::iter::once("alpha".to_string())
            .chain(config.feature_names.iter().map(|f| format!("beta_{f}")))
            .chain((1..=stages).map(|k| format!("t_{k}")))
            .chain((1..=stages).map(|k| format!("delta_{k}")))
            .collect()
    }

    /// Flat vector in [`ModelParams::names`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        std::iter::once(self.alpha)
            .chain(self.beta.iter().copied())
            .chain(self.thresholds.iter().copied())
            .chain(self.deltas.iter().copied())
            .collect()
    }

    pub fn from_flat(values: &[f64], config: &FunnelConfig) -> Result<Self> {
        let p = config.n_features();
        let s = config.n_decision_stages();
        if values.len() != 1 + p + 2 * s {
            return Err(FunnelError::InvalidParams(format!(
                "flat parameter vector has {} entries, expected {}",
                values.len(),
                1 + p + 2 * s
            )));
        }
        Ok(ModelParams {
            alpha: values[0],
            beta: values[1..1 + p].to_vec(),
            thresholds: values[1 + p..1 + p + s].to_vec(),
            deltas: values[1 + p + s..].to_vec(),
        })
    }
}
