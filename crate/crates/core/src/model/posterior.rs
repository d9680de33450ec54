//! Log posterior in constrained and unconstrained coordinates.

use std::f64::consts::{LN_2, PI};

use super::{FunnelConfig, ModelParams, PatientRecord, PreparedData};
use crate::error::Result;
use crate::inference::transform::{constrain_flat, to_unconstrained, Layout, ThresholdChain};

fn log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

fn log_half_normal(x: f64, sd: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    LN_2 + log_normal(x, 0.0, sd)
}

/// Log prior density of constrained parameters.
///
/// Normal on α and β; half-normal on `t_1`, on each increment
/// `t_k − t_{k−1}`, and on each δ_k.
pub fn log_prior(params: &ModelParams, config: &FunnelConfig) -> f64 {
    let mut scratch = vec![0.0; params.dim()];
    log_prior_grad(params, config, &mut scratch)
}

/// Log prior plus its gradient in the constrained flat layout, added into
/// `grad`.
pub(crate) fn log_prior_grad(params: &ModelParams, config: &FunnelConfig, grad: &mut [f64]) -> f64 {
    let pr = &config.priors;
    let p = params.beta.len();
    let s = params.thresholds.len();
    let mut total = log_normal(params.alpha, pr.alpha_mean, pr.alpha_sd);
    grad[0] -= (params.alpha - pr.alpha_mean) / (pr.alpha_sd * pr.alpha_sd);
    let vb = pr.beta_sd * pr.beta_sd;
    for (j, &b) in params.beta.iter().enumerate() {
        total += log_normal(b, 0.0, pr.beta_sd);
        grad[1 + j] -= b / vb;
    }
    let vt = pr.threshold_sd * pr.threshold_sd;
    for k in 0..s {
        let inc = if k == 0 {
            params.thresholds[0]
        } else {
            params.thresholds[k] - params.thresholds[k - 1]
        };
        total += log_half_normal(inc, pr.threshold_sd);
        grad[1 + p + k] -= inc / vt;
        if k > 0 {
            grad[1 + p + k - 1] += inc / vt;
        }
    }
    let vd = pr.delta_sd * pr.delta_sd;
    for (k, &d) in params.deltas.iter().enumerate() {
        total += log_half_normal(d, pr.delta_sd);
        grad[1 + p + s + k] -= d / vd;
    }
    total
}

/// Σ pathway log-likelihoods + log prior, in constrained coordinates (no
/// Jacobian). Out-of-support parameters give `-inf`.
pub fn total_log_posterior(
    dataset: &[PatientRecord],
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<f64> {
    let data = PreparedData::new(dataset, config)?;
    if params.validate(config).is_err() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(data.log_likelihood(params) + log_prior(params, config))
}

/// Gradient of the unconstrained log posterior (including the log-Jacobian)
/// at the unconstrained image of `params`, ordered
/// `[alpha, beta…, raw_t1, raw_increments…, raw_deltas…]`.
pub fn grad_log_posterior(
    dataset: &[PatientRecord],
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<Vec<f64>> {
    params.validate(config)?;
    let posterior = FunnelPosterior::new(dataset, config)?;
    let u = to_unconstrained(params).to_flat();
    let mut grad = vec![0.0; u.len()];
    posterior.log_density_grad(&u, &mut grad, true);
    Ok(grad)
}

/// Posterior over unconstrained parameters for a fixed dataset.
#[derive(Debug, Clone)]
pub struct FunnelPosterior {
    data: PreparedData,
    config: FunnelConfig,
    layout: Layout,
}

impl FunnelPosterior {
    pub fn new(dataset: &[PatientRecord], config: &FunnelConfig) -> Result<Self> {
        Ok(FunnelPosterior {
            data: PreparedData::new(dataset, config)?,
            config: config.clone(),
            layout: Layout::of(config),
        })
    }

    pub fn config(&self) -> &FunnelConfig {
        &self.config
    }

    pub fn data(&self) -> &PreparedData {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn constrain(&self, u: &[f64]) -> ModelParams {
        constrain_flat(u, self.layout)
    }

    /// Log density at unconstrained `u`; with `jacobian` the density is that
    /// of `u` itself, without it the constrained posterior read in `u`
    /// coordinates (what a mode finder wants).
    pub fn log_density(&self, u: &[f64], jacobian: bool) -> f64 {
        let mut scratch = vec![0.0; u.len()];
        self.log_density_grad(u, &mut scratch, jacobian)
    }

    /// Log density and its gradient (overwrites `grad`).
    pub fn log_density_grad(&self, u: &[f64], grad: &mut [f64], jacobian: bool) -> f64 {
        let layout = self.layout;
        let thr = layout.thresholds();
        let del = layout.deltas();
        let chain = ThresholdChain::forward(&u[thr.clone()]);
        let params = ModelParams {
            alpha: u[0],
            beta: u[1..1 + layout.n_features].to_vec(),
            thresholds: chain.t.clone(),
            deltas: u[del.clone()]
                .iter()
                .map(|r| crate::riskdist::DELTA_MIN + r.exp())
                .collect(),
        };
        if params.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0))
            || params.deltas.iter().any(|d| !d.is_finite())
        {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }

        // gradient wrt constrained values first
        let mut cgrad = vec![0.0; u.len()];
        let mut value = self.data.log_likelihood_grad(&params, &mut cgrad);
        value += log_prior_grad(&params, &self.config, &mut cgrad);

        grad[..1 + layout.n_features].copy_from_slice(&cgrad[..1 + layout.n_features]);
        let mut dt = cgrad[thr.clone()].to_vec();
        chain.backward(&mut dt, &mut grad[thr.clone()]);
        for k in del.clone() {
            // dδ/draw = exp(raw)
            grad[k] = cgrad[k] * u[k].exp();
        }
        if jacobian {
            value += chain.log_jacobian_grad(&mut grad[thr]);
            for k in del {
                value += u[k];
                grad[k] += 1.0;
            }
        }
        if !value.is_finite() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        value
    }
}
