//! Censoring-naive logistic-regression baselines.
//!
//! Three ways of turning a funnel dataset into an ordinary classification
//! problem: fit only on patients with an observed outcome, predict the final
//! stage decision instead of the outcome, or treat censored outcomes as 0.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::model::{FunnelConfig, PatientRecord};
use crate::riskdist::normal::{log_sigmoid, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    /// Outcome on outcome-observed patients only.
    TargetYObserved,
    /// Whether the patient reached the final stage, on everyone.
    TargetStageDecision,
    /// Outcome on everyone, censored outcomes set to 0.
    ImputedZero,
}

impl BaselineVariant {
    pub const ALL: [BaselineVariant; 3] = [
        BaselineVariant::TargetYObserved,
        BaselineVariant::TargetStageDecision,
        BaselineVariant::ImputedZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineVariant::TargetYObserved => "target_y_observed",
            BaselineVariant::TargetStageDecision => "target_stage_decision",
            BaselineVariant::ImputedZero => "imputed_zero",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BaselineVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FunnelError::InvalidConfig(format!("unknown baseline variant {s:?}")))
    }
}

impl fmt::Display for BaselineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub variant: BaselineVariant,
    /// Ridge penalty `λ/2·(α² + ‖β‖²)`.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Converged once the largest coefficient change is below this.
    pub tolerance: f64,
}

impl BaselineSpec {
    pub fn new(variant: BaselineVariant) -> Self {
        BaselineSpec {
            variant,
            lambda: 1.0,
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(FunnelError::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(FunnelError::InvalidConfig(
                "max_iterations and tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Rows and binary targets a baseline is trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub rows: Vec<Vec<f64>>,
    pub target: Vec<bool>,
}

/// Builds the design and target for `variant`.
///
/// With `full_features` (simulated data) every row uses all features.
/// Otherwise rows come from the records and features never revealed to the
/// decision-maker are taken as 0, the mean of a standardized feature.
pub fn build_training_view(
    dataset: &[PatientRecord],
    full_features: Option<&[Vec<f64>]>,
    variant: BaselineVariant,
    config: &FunnelConfig,
) -> Result<TrainingView> {
    if let Some(full) = full_features {
        if full.len() != dataset.len() {
            return Err(FunnelError::data(format!(
                "{} full feature rows for {} records",
                full.len(),
                dataset.len()
            )));
        }
    }
    let row = |i: usize, r: &PatientRecord| -> Vec<f64> {
        match full_features {
            Some(full) => full[i].clone(),
            None => r.features.iter().map(|x| x.unwrap_or(0.0)).collect(),
        }
    };
    let mut view = TrainingView {
        rows: Vec::new(),
        target: Vec::new(),
    };
    for (i, r) in dataset.iter().enumerate() {
        let target = match variant {
            BaselineVariant::TargetYObserved => match r.outcome {
                Some(y) => y,
                None => continue,
            },
            BaselineVariant::TargetStageDecision => r.deepest_stage(config.n_stages) == config.n_stages,
            BaselineVariant::ImputedZero => r.outcome.unwrap_or(false),
        };
        view.rows.push(row(i, r));
        view.target.push(target);
    }
    if view.rows.is_empty() {
        return Err(FunnelError::data(format!(
            "no training rows for baseline {variant}"
        )));
    }
    Ok(view)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized log-likelihood after each accepted iteration, starting at
    /// the zero vector.
    pub objective_trace: Vec<f64>,
}

impl LogisticFit {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        predict_proba(self.alpha, &self.beta, x)
    }

    /// `alpha`, `beta_<feature>` pairs, matching the funnel model's names.
    pub fn named(&self, config: &FunnelConfig) -> Vec<(String, f64)> {
        std::iter::once(("alpha".to_string(), self.alpha))
            .chain(
                config
                    .feature_names
                    .iter()
                    .zip(&self.beta)
                    .map(|(f, &b)| (format!("beta_{f}"), b)),
            )
            .collect()
    }
}

/// `σ(α + xᵀβ)`.
pub fn predict_proba(alpha: f64, beta: &[f64], x: &[f64]) -> f64 {
    sigmoid(alpha + beta.iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>())
}

fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    let eta = x * theta;
    let ll: f64 = eta
        .iter()
        .zip(y.iter())
        .map(|(&e, &yi)| yi * log_sigmoid(e) + (1.0 - yi) * log_sigmoid(-e))
        .sum();
    ll - 0.5 * lambda * theta.norm_squared()
}

/// Ridge logistic regression by Newton/IRLS with step halving.
///
/// Returns the last iterate flagged `converged = false` when the iteration
/// cap is reached, e.g. for separable data without a penalty.
pub fn fit_logistic(rows: &[Vec<f64>], target: &[bool], spec: &BaselineSpec) -> Result<LogisticFit> {
    spec.validate()?;
    if rows.is_empty() || rows.len() != target.len() {
        return Err(FunnelError::data("logistic fit needs matching nonempty rows and targets"));
    }
    let n = rows.len();
    let p = rows[0].len() + 1;
    if rows.iter().any(|r| r.len() + 1 != p) {
        return Err(FunnelError::data("ragged design rows"));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let y = DVector::from_iterator(n, target.iter().map(|&t| f64::from(u8::from(t))));
    let mut theta = DVector::zeros(p);
    let mut objective = penalized_loglik(&x, &y, &theta, spec.lambda);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < spec.max_iterations {
        iterations += 1;
        let eta = &x * &theta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let grad = x.transpose() * (&y - &mu) - &theta * spec.lambda;
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = x.transpose() * xw + DMatrix::identity(p, p) * spec.lambda;
        let step = hessian
            .cholesky()
            .ok_or(FunnelError::RankDeficient)?
            .solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let candidate = &theta + &step * scale;
            let value = penalized_loglik(&x, &y, &candidate, spec.lambda);
            if value >= objective {
                theta = candidate;
                objective = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let change = step.amax() * scale;
        if accepted {
            trace.push(objective);
        }
        if !accepted || change < spec.tolerance {
            converged = change < spec.tolerance;
            break;
        }
    }
    Ok(LogisticFit {
        alpha: theta[0],
        beta: theta.iter().skip(1).copied().collect(),
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// A fitted baseline with the variant it was trained as.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub variant: BaselineVariant,
    pub lambda: f64,
    pub fit: LogisticFit,
}

pub fn fit_baseline(
    dataset: &[PatientRecord],
    full_features: Option<&[Vec<f64>]>,
    spec: &BaselineSpec,
    config: &FunnelConfig,
) -> Result<BaselineFit> {
    let view = build_training_view(dataset, full_features, spec.variant, config)?;
    Ok(BaselineFit {
        variant: spec.variant,
        lambda: spec.lambda,
        fit: fit_logistic(&view.rows, &view.target, spec)?,
    })
}
