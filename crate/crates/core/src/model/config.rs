use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};

/// Prior settings for the funnel model.
///
/// Threshold priors are half-normal on the first threshold and on each
/// increment between consecutive thresholds; shape priors are half-normal on
/// each δ_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub beta_sd: f64,
    pub threshold_sd: f64,
    pub delta_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            alpha_mean: 0.0,
            alpha_sd: 1.0,
            beta_sd: 1.0,
            threshold_sd: 0.5,
            delta_sd: 0.5,
        }
    }
}

impl PriorSpec {
    /// Low base-rate intercept prior, N(−5, 1).
    pub fn low_base_rate() -> Self {
        PriorSpec {
            alpha_mean: -5.0,
            ..PriorSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("alpha_sd", self.alpha_sd),
            ("beta_sd", self.beta_sd),
            ("threshold_sd", self.threshold_sd),
            ("delta_sd", self.delta_sd),
        ];
        for (name, value) in scales {
            if !(value > 0.0 && value.is_finite()) {
                return Err(FunnelError::InvalidConfig(format!(
                    "prior scale {name} must be positive, got {value}"
                )));
            }
        }
        if !self.alpha_mean.is_finite() {
            return Err(FunnelError::InvalidConfig("alpha_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Structure of the decision funnel.
///
/// Stages are numbered `1..=n_stages`. `stage_feature_masks[k - 1]` marks the
/// features visible at stage `k`; masks must be nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelConfig {
    pub n_stages: usize,
    pub observation_stage: usize,
    pub feature_names: Vec<String>,
    pub stage_feature_masks: Vec<Vec<bool>>,
    #[serde(default = "default_true")]
    pub share_coefficients: bool,
    #[serde(default)]
    pub priors: PriorSpec,
}

fn default_true() -> bool {
    true
}

impl FunnelConfig {
    /// Masks built from the first stage at which each feature is revealed.
    pub fn from_first_stages(
        n_stages: usize,
        observation_stage: usize,
        features: &[(String, usize)],
    ) -> Result<Self> {
        let masks = (1..=n_stages)
            .map(|stage| features.iter().map(|(_, first)| *first <= stage).collect())
            .collect();
        let config = FunnelConfig {
            n_stages,
            observation_stage,
            feature_names: features.iter().map(|(name, _)| name.clone()).collect(),
            stage_feature_masks: masks,
            share_coefficients: true,
            priors: PriorSpec::default(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Three-stage funnel with `n_features` split evenly between stage 1
    /// and stage 2, outcome observed from stage 2 on.
    pub fn three_stage(n_features: usize) -> Self {
        let first = n_features.div_ceil(2);
        let features: Vec<(String, usize)> = (0..n_features)
            .map(|j| (format!("x{}", j + 1), if j < first { 1 } else { 2 }))
            .collect();
        FunnelConfig::from_first_stages(3, 2, &features).expect("valid three-stage config")
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Number of decision stages (`K − 1`): one threshold and one δ each.
    pub fn n_decision_stages(&self) -> usize {
        self.n_stages - 1
    }

    pub fn mask(&self, stage: usize) -> &[bool] {
        &self.stage_feature_masks[stage - 1]
    }

    /// Indices of features visible at `stage`.
    pub fn stage_columns(&self, stage: usize) -> Vec<usize> {
        self.mask(stage)
            .iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
            .collect()
    }

    /// First stage at which feature `j` is visible, if any.
    pub fn first_stage_of(&self, j: usize) -> Option<usize> {
        (1..=self.n_stages).find(|&stage| self.mask(stage)[j])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_stages;
        if k < 2 {
            return Err(FunnelError::InvalidConfig(format!(
                "need at least 2 stages, got {k}"
            )));
        }
        if !(2..=k).contains(&self.observation_stage) {
            return Err(FunnelError::InvalidConfig(format!(
                "observation stage must lie in [2, {k}], got {}",
                self.observation_stage
            )));
        }
        if self.stage_feature_masks.len() != k {
            return Err(FunnelError::InvalidConfig(format!(
                "expected {k} stage masks, got {}",
                self.stage_feature_masks.len()
            )));
        }
        let p = self.n_features();
        for (idx, mask) in self.stage_feature_masks.iter().enumerate() {
            if mask.len() != p {
                return Err(FunnelError::InvalidConfig(format!(
                    "mask for stage {} has {} entries, expected {p}",
                    idx + 1,
                    mask.len()
                )));
            }
        }
        for stage in 1..k {
            let (cur, next) = (self.mask(stage), self.mask(stage + 1));
            if let Some(j) = (0..p).find(|&j| cur[j] && !next[j]) {
                return Err(FunnelError::InvalidConfig(format!(
                    "masks not nested: feature `{}` visible at stage {stage} but not at {}",
                    self.feature_names[j],
                    stage + 1
                )));
            }
        }
        if !self.share_coefficients {
            return Err(FunnelError::InvalidConfig(
                "per-stage coefficients are not supported; set share_coefficients".into(),
            ));
        }
        self.priors.validate()
    }
}
