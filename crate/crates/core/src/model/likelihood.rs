//! Pathway log-likelihood and its analytic gradient.
//!
//! Each visited stage contributes the log mass of the risk interval that
//! produced its decision. When the outcome is observed, the final decision's
//! term is replaced by the joint log probability of that interval and the
//! outcome, which equals the decision term plus the Bernoulli log-likelihood
//! of the interval-conditional mean.

use rayon::prelude::*;

use super::{FunnelConfig, ModelParams, PatientRecord};
use crate::error::Result;
use crate::riskdist::normal::log_add_exp;
use crate::riskdist::{threshold_logit, StageRisk};

/// Records per reduction chunk. Partial sums are combined in chunk order, so
/// results do not depend on the number of worker threads.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy)]
struct Step {
    stage: usize,
    lo: Option<usize>,
    hi: Option<usize>,
}

#[derive(Debug, Clone)]
struct PreparedRecord {
    steps: Vec<Step>,
    outcome: Option<bool>,
}

/// A validated dataset laid out for repeated likelihood evaluation.
///
/// Features are stored densely; entries the likelihood never reads (outside
/// the mask of every visited stage) are zero.
#[derive(Debug, Clone)]
pub struct PreparedData {
    n_features: usize,
    stage_columns: Vec<Vec<usize>>,
    records: Vec<PreparedRecord>,
    features: Vec<f64>,
}

/// Per-evaluation constants shared by all records.
struct Context<'a> {
    params: &'a ModelParams,
    threshold_logits: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(params: &'a ModelParams) -> Self {
        Context {
            params,
            threshold_logits: params.thresholds.iter().map(|&t| threshold_logit(t)).collect(),
        }
    }

    fn bound(&self, idx: Option<usize>, below: bool) -> f64 {
        match idx {
            Some(i) => self.threshold_logits[i],
            None if below => f64::NEG_INFINITY,
            None => f64::INFINITY,
        }
    }
}

impl PreparedData {
    pub fn new(records: &[PatientRecord], config: &FunnelConfig) -> Result<Self> {
        config.validate()?;
        let p = config.n_features();
        let mut features = Vec::with_capacity(records.len() * p);
        let mut prepared = Vec::with_capacity(records.len());
        for record in records {
            record.validate(config)?;
            let steps = record
                .pathway()
                .0
                .iter()
                .map(|d| {
                    let (lo, hi) = d.disposition.interval(d.stage, config.n_stages);
                    Step {
                        stage: d.stage,
                        lo,
                        hi,
                    }
                })
                .collect();
            features.extend(record.features.iter().map(|x| x.unwrap_or(0.0)));
            prepared.push(PreparedRecord {
                steps,
                outcome: record.outcome,
            });
        }
        Ok(PreparedData {
            n_features: p,
            stage_columns: (1..=config.n_stages)
                .map(|s| config.stage_columns(s))
                .collect(),
            records: prepared,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn chunks(&self) -> Vec<std::ops::Range<usize>> {
        let n = self.records.len();
        (0..n.div_ceil(CHUNK))
            .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
            .collect()
    }

    fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    fn eta(&self, ctx: &Context, stage: usize, x: &[f64]) -> f64 {
        let beta = &ctx.params.beta;
        ctx.params.alpha
            + self.stage_columns[stage - 1]
                .iter()
                .map(|&j| beta[j] * x[j])
                .sum::<f64>()
    }

    fn record_loglik(&self, ctx: &Context, i: usize) -> f64 {
        let rec = &self.records[i];
        let x = self.x(i);
        let last = rec.steps.len() - 1;
        let mut total = 0.0;
        for (n, step) in rec.steps.iter().enumerate() {
            let risk = StageRisk {
                eta: self.eta(ctx, step.stage, x),
                delta: ctx.params.deltas[step.stage - 1],
            };
            let mass = risk.interval(ctx.bound(step.lo, true), ctx.bound(step.hi, false));
            total += match (n == last, rec.outcome) {
                (true, Some(true)) => mass.log_pos,
                (true, Some(false)) => mass.log_neg,
                _ => mass.log_prob(),
            };
        }
        total
    }

    /// Adds the record's gradient (constrained flat layout, thresholds on the
    /// probability scale) into `grad`.
    fn record_loglik_grad(&self, ctx: &Context, i: usize, grad: &mut [f64]) -> f64 {
        let rec = &self.records[i];
        let x = self.x(i);
        let p = self.n_features;
        let n_thr = ctx.params.thresholds.len();
        let last = rec.steps.len() - 1;
        let mut total = 0.0;
        for (n, step) in rec.steps.iter().enumerate() {
            let risk = StageRisk {
                eta: self.eta(ctx, step.stage, x),
                delta: ctx.params.deltas[step.stage - 1],
            };
            let (neg, pos) =
                risk.interval_grad(ctx.bound(step.lo, true), ctx.bound(step.hi, false));
            let term = match (n == last, rec.outcome) {
                (true, Some(true)) => pos,
                (true, Some(false)) => neg,
                _ => {
                    let value = log_add_exp(neg.value, pos.value);
                    let (w0, w1) = if value == f64::NEG_INFINITY {
                        (0.0, 0.0)
                    } else {
                        ((neg.value - value).exp(), (pos.value - value).exp())
                    };
                    crate::riskdist::ComponentGrad {
                        value,
                        d_eta: w0 * neg.d_eta + w1 * pos.d_eta,
                        d_delta: w0 * neg.d_delta + w1 * pos.d_delta,
                        d_lt_lo: w0 * neg.d_lt_lo + w1 * pos.d_lt_lo,
                        d_lt_hi: w0 * neg.d_lt_hi + w1 * pos.d_lt_hi,
                    }
                }
            };
            total += term.value;
            grad[0] += term.d_eta;
            for &j in &self.stage_columns[step.stage - 1] {
                grad[1 + j] += term.d_eta * x[j];
            }
            let thresholds = &ctx.params.thresholds;
            // d logit(t)/dt = 1/(t(1 − t))
            if let Some(k) = step.lo {
                let t = thresholds[k];
                grad[1 + p + k] += term.d_lt_lo / (t * (1.0 - t));
            }
            if let Some(k) = step.hi {
                let t = thresholds[k];
                grad[1 + p + k] += term.d_lt_hi / (t * (1.0 - t));
            }
            grad[1 + p + n_thr + step.stage - 1] += term.d_delta;
        }
        total
    }

    /// Σ over records of the pathway log-likelihood.
    pub fn log_likelihood(&self, params: &ModelParams) -> f64 {
        let ctx = Context::new(params);
        let chunk_sums: Vec<f64> = self
            .chunks()
            .into_par_iter()
            .map(|range| range.map(|i| self.record_loglik(&ctx, i)).sum())
            .collect();
        sanitize(chunk_sums.into_iter().sum())
    }

    /// Log-likelihood and its gradient in the constrained flat layout
    /// `[alpha, beta…, t…, delta…]`, added into `grad`.
    pub fn log_likelihood_grad(&self, params: &ModelParams, grad: &mut [f64]) -> f64 {
        let ctx = Context::new(params);
        let dim = grad.len();
        let partials: Vec<(f64, Vec<f64>)> = self
            .chunks()
            .into_par_iter()
            .map(|range| {
                let mut g = vec![0.0; dim];
                let v = range
                    .map(|i| self.record_loglik_grad(&ctx, i, &mut g))
                    .sum::<f64>();
                (v, g)
            })
            .collect();
        let mut total = 0.0;
        for (v, g) in partials {
            total += v;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        sanitize(total)
    }

    /// Pathway log-likelihood of record `i` alone.
    pub fn record_log_likelihood(&self, params: &ModelParams, i: usize) -> f64 {
        sanitize(self.record_loglik(&Context::new(params), i))
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}
