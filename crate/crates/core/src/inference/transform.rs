//! Bijection between unconstrained vectors and valid [`ModelParams`].
//!
//! Flat layout: `[alpha, beta…, raw_t1, raw_increment_2…, raw_delta…]`.
//!
//! * `t_1 = 0.5·σ(raw_t1)`
//! * `t_k = t_{k−1} + (1 − t_{k−1})·σ(raw_increment_k)`, so `t_k < 1`
//! * `δ_k = DELTA_MIN + exp(raw_delta_k)`

use serde::{Deserialize, Serialize};

use crate::model::params::FIRST_THRESHOLD_MAX;
use crate::model::{FunnelConfig, ModelParams};
use crate::riskdist::normal::{log_sigmoid, logit, sigmoid};
use crate::riskdist::DELTA_MIN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub raw_t1: f64,
    pub raw_increments: Vec<f64>,
    pub raw_deltas: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(self.alpha);
        out.extend_from_slice(&self.beta);
        out.push(self.raw_t1);
        out.extend_from_slice(&self.raw_increments);
        out.extend_from_slice(&self.raw_deltas);
        out
    }

    pub fn from_flat(u: &[f64], n_features: usize, n_decision_stages: usize) -> Self {
        let p = n_features;
        let s = n_decision_stages;
        assert_eq!(u.len(), 1 + p + 2 * s, "unconstrained vector length");
        UnconstrainedParams {
            alpha: u[0],
            beta: u[1..1 + p].to_vec(),
            raw_t1: u[1 + p],
            raw_increments: u[2 + p..1 + p + s].to_vec(),
            raw_deltas: u[1 + p + s..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        2 + self.beta.len() + self.raw_increments.len() + self.raw_deltas.len()
    }
}

/// Index bookkeeping for the flat layout.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n_features: usize,
    pub n_stages: usize,
}

impl Layout {
    pub fn of(config: &FunnelConfig) -> Self {
        Layout {
            n_features: config.n_features(),
            n_stages: config.n_decision_stages(),
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.n_features + 2 * self.n_stages
    }

    pub fn thresholds(&self) -> std::ops::Range<usize> {
        1 + self.n_features..1 + self.n_features + self.n_stages
    }

    pub fn deltas(&self) -> std::ops::Range<usize> {
        1 + self.n_features + self.n_stages..self.dim()
    }
}

pub fn to_constrained(u: &UnconstrainedParams) -> ModelParams {
    let flat = u.to_flat();
    let layout = Layout {
        n_features: u.beta.len(),
        n_stages: u.raw_deltas.len(),
    };
    constrain_flat(&flat, layout)
}

pub fn to_unconstrained(params: &ModelParams) -> UnconstrainedParams {
    let t = &params.thresholds;
    let raw_increments = (1..t.len())
        .map(|k| logit((t[k] - t[k - 1]) / (1.0 - t[k - 1])))
        .collect();
    UnconstrainedParams {
        alpha: params.alpha,
        beta: params.beta.clone(),
        raw_t1: logit(t[0] / FIRST_THRESHOLD_MAX),
        raw_increments,
        raw_deltas: params.deltas.iter().map(|d| (d - DELTA_MIN).ln()).collect(),
    }
}

/// Log absolute determinant of the Jacobian of [`to_constrained`].
pub fn log_jacobian(u: &UnconstrainedParams) -> f64 {
    let flat = u.to_flat();
    let layout = Layout {
        n_features: u.beta.len(),
        n_stages: u.raw_deltas.len(),
    };
    let mut scratch = vec![0.0; flat.len()];
    ThresholdChain::forward(&flat[layout.thresholds()]).log_jacobian_grad(&mut scratch)
        + flat[layout.deltas()].iter().sum::<f64>()
}

/// Flat-vector form of [`to_constrained`].
pub(crate) fn constrain_flat(u: &[f64], layout: Layout) -> ModelParams {
    let chain = ThresholdChain::forward(&u[layout.thresholds()]);
    ModelParams {
        alpha: u[0],
        beta: u[1..1 + layout.n_features].to_vec(),
        thresholds: chain.t,
        deltas: u[layout.deltas()]
            .iter()
            .map(|r| DELTA_MIN + r.exp())
            .collect(),
    }
}

/// Forward pass of the threshold transform, kept for the backward pass.
pub(crate) struct ThresholdChain {
    pub raw: Vec<f64>,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// `1 − t_k`, computed as a product so it stays accurate near 1.
    pub one_minus_t: Vec<f64>,
    pub increments: Vec<f64>,
}

impl ThresholdChain {
    pub fn forward(raw: &[f64]) -> Self {
        let n = raw.len();
        let mut chain = ThresholdChain {
            raw: raw.to_vec(),
            s: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
            one_minus_t: Vec::with_capacity(n),
            increments: Vec::with_capacity(n),
        };
        for (k, &r) in raw.iter().enumerate() {
            let s = sigmoid(r);
            chain.s.push(s);
            if k == 0 {
                let t1 = FIRST_THRESHOLD_MAX * s;
                chain.t.push(t1);
                chain.one_minus_t.push(1.0 - t1);
                chain.increments.push(t1);
            } else {
                let room = chain.one_minus_t[k - 1];
                let inc = room * s;
                chain.t.push(chain.t[k - 1] + inc);
                // 1 − t_k = (1 − t_{k−1})(1 − s_k)
                chain.one_minus_t.push(room * sigmoid(-r));
                chain.increments.push(inc);
            }
        }
        chain
    }

    /// Maps `∂f/∂t` (in place, consumed) to `∂f/∂raw`, written into `out`.
    pub fn backward(&self, dt: &mut [f64], out: &mut [f64]) {
        let n = self.t.len();
        let mut acc = 0.0;
        for k in (0..n).rev() {
            acc += dt[k];
            let s = self.s[k];
            if k == 0 {
                out[0] = acc * FIRST_THRESHOLD_MAX * s * (1.0 - s);
            } else {
                out[k] = acc * self.one_minus_t[k - 1] * s * (1.0 - s);
                acc *= 1.0 - s;
            }
        }
    }

    /// Log-Jacobian of the threshold block; adds its gradient wrt the raw
    /// values into `grad_raw`.
    pub fn log_jacobian_grad(&self, grad_raw: &mut [f64]) -> f64 {
        let n = self.t.len();
        let mut value = 0.0;
        let mut dt = vec![0.0; n];
        for k in 0..n {
            let r = self.raw[k];
            value += log_sigmoid(r) + log_sigmoid(-r);
            grad_raw[k] += 1.0 - 2.0 * self.s[k];
            if k == 0 {
                value += FIRST_THRESHOLD_MAX.ln();
            } else {
                value += self.one_minus_t[k - 1].ln();
                dt[k - 1] -= 1.0 / self.one_minus_t[k - 1];
            }
        }
        let mut via_t = vec![0.0; n];
        self.backward(&mut dt, &mut via_t);
        for (g, v) in grad_raw.iter_mut().zip(via_t) {
            *g += v;
        }
        value
    }
}
