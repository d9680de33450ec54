//! Discriminant risk distribution.
//!
//! A risk draw `p ~ R(φ, δ)` comes from a two-class Gaussian signal model:
//! `Y ~ Bern(φ)`, `X | Y=0 ~ N(0, 1)`, `X | Y=1 ~ N(δ, 1)` and `p = g(X)` with
//! `g(x) = Pr(Y = 1 | X = x)`. On the log-odds scale
//! `logit g(x) = logit φ + δx − δ²/2`, so every probability statement about `p`
//! turns into a normal CDF evaluated at
//! `g⁻¹(t) = δ/2 + (logit t − logit φ)/δ`.
//!
//! The public functions take probabilities; [`StageRisk`] is the log-odds
//! form the likelihood uses directly.

pub mod normal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};

/// Smallest admissible shape parameter.
pub const DELTA_MIN: f64 = 1e-4;

/// Interval masses below this are treated as empty when conditioning.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDistributionParams {
    pub phi: f64,
    pub delta: f64,
}

impl RiskDistributionParams {
    pub fn new(phi: f64, delta: f64) -> Result<Self> {
        let params = RiskDistributionParams { phi, delta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(FunnelError::InvalidParams(format!(
                "phi must lie in (0, 1), got {}",
                self.phi
            )));
        }
        if !(self.delta >= DELTA_MIN && self.delta.is_finite()) {
            return Err(FunnelError::InvalidParams(format!(
                "delta must be finite and >= {DELTA_MIN}, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn stage(&self) -> StageRisk {
        StageRisk {
            eta: normal::logit(self.phi),
            delta: self.delta,
        }
    }
}

/// `g(x) = Pr(Y = 1 | X = x)`.
pub fn g(x: f64, params: &RiskDistributionParams) -> f64 {
    let RiskDistributionParams { phi, delta } = *params;
    normal::sigmoid(normal::logit(phi) + delta * x - 0.5 * delta * delta)
}

/// Unique `x` with `g(x) = t`.
pub fn g_inverse(t: f64, params: &RiskDistributionParams) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(FunnelError::Domain(format!(
            "g_inverse needs t in (0, 1), got {t}"
        )));
    }
    Ok(params.stage().z(normal::logit(t)))
}

/// Pr(p > t).
pub fn tail_prob(t: f64, params: &RiskDistributionParams) -> f64 {
    interval_mass(params.stage(), t, 1.0).prob()
}

/// Pr(t_lo ≤ p < t_hi).
pub fn interval_prob(t_lo: f64, t_hi: f64, params: &RiskDistributionParams) -> Result<f64> {
    check_interval(t_lo, t_hi)?;
    Ok(interval_mass(params.stage(), t_lo, t_hi).prob())
}

/// E[Y | p > t].
pub fn cond_mean_above(t: f64, params: &RiskDistributionParams) -> Result<f64> {
    interval_mass(params.stage(), t, 1.0).cond_mean()
}

/// E[Y | t_lo ≤ p < t_hi].
pub fn cond_mean_interval(t_lo: f64, t_hi: f64, params: &RiskDistributionParams) -> Result<f64> {
    check_interval(t_lo, t_hi)?;
    interval_mass(params.stage(), t_lo, t_hi).cond_mean()
}

fn check_interval(t_lo: f64, t_hi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t_lo) || !(0.0..=1.0).contains(&t_hi) || t_lo > t_hi {
        return Err(FunnelError::Domain(format!(
            "interval needs 0 <= t_lo <= t_hi <= 1, got [{t_lo}, {t_hi}]"
        )));
    }
    Ok(())
}

/// Log-odds of a threshold, with the closed ends of the unit interval mapped
/// to infinite bounds.
pub fn threshold_logit(t: f64) -> f64 {
    if t <= 0.0 {
        f64::NEG_INFINITY
    } else if t >= 1.0 {
        f64::INFINITY
    } else {
        normal::logit(t)
    }
}

fn interval_mass(stage: StageRisk, t_lo: f64, t_hi: f64) -> IntervalMass {
    stage.interval(threshold_logit(t_lo), threshold_logit(t_hi))
}

/// Risk distribution in log-odds form: `eta = logit φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRisk {
    pub eta: f64,
    pub delta: f64,
}

/// The two mixture components of an interval's mass.
///
/// `log_neg = ln((1 − φ)·Pr(z_lo ≤ X < z_hi | Y=0))` and
/// `log_pos = ln(φ·Pr(z_lo ≤ X < z_hi | Y=1))`, i.e. the joint log
/// probabilities of landing in the interval with outcome 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMass {
    pub log_neg: f64,
    pub log_pos: f64,
}

impl IntervalMass {
    pub fn log_prob(&self) -> f64 {
        normal::log_add_exp(self.log_neg, self.log_pos)
    }

    pub fn prob(&self) -> f64 {
        self.log_prob().exp().clamp(0.0, 1.0)
    }

    pub fn cond_mean(&self) -> Result<f64> {
        let log_prob = self.log_prob();
        let prob = log_prob.exp();
        if !(prob > UNDERFLOW_FLOOR) {
            return Err(FunnelError::ConditioningDegenerate { probability: prob });
        }
        Ok((self.log_pos - log_prob).exp().clamp(0.0, 1.0))
    }
}

/// Partial derivatives of one joint log-mass component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComponentGrad {
    pub value: f64,
    pub d_eta: f64,
    pub d_delta: f64,
    pub d_lt_lo: f64,
    pub d_lt_hi: f64,
}

impl StageRisk {
    pub fn from_params(params: &RiskDistributionParams) -> Self {
        params.stage()
    }

    pub fn phi(&self) -> f64 {
        normal::sigmoid(self.eta)
    }

    /// `g⁻¹` at a threshold given on the log-odds scale.
    pub fn z(&self, lt: f64) -> f64 {
        if lt.is_infinite() {
            return lt;
        }
        0.5 * self.delta + (lt - self.eta) / self.delta
    }

    pub fn interval(&self, lt_lo: f64, lt_hi: f64) -> IntervalMass {
        let (z_lo, z_hi) = (self.z(lt_lo), self.z(lt_hi));
        IntervalMass {
            log_neg: normal::log_sigmoid(-self.eta) + normal::log_diff_cdf(z_lo, z_hi),
            log_pos: normal::log_sigmoid(self.eta)
                + normal::log_diff_cdf(z_lo - self.delta, z_hi - self.delta),
        }
    }

    /// Both joint log-mass components with their gradients.
    pub fn interval_grad(&self, lt_lo: f64, lt_hi: f64) -> (ComponentGrad, ComponentGrad) {
        let delta = self.delta;
        let (z_lo, z_hi) = (self.z(lt_lo), self.z(lt_hi));
        let phi = self.phi();

        // dz/deta = -1/delta, dz/dlt = 1/delta, dz/ddelta = 1/2 - (lt - eta)/delta^2
        let inv_delta = 1.0 / delta;
        let dz_ddelta = |lt: f64| {
            if lt.is_infinite() {
                0.0
            } else {
                0.5 - (lt - self.eta) * inv_delta * inv_delta
            }
        };
        let (dzlo_dd, dzhi_dd) = (dz_ddelta(lt_lo), dz_ddelta(lt_hi));

        let (v0, a0, b0) = normal::log_diff_cdf_grad(z_lo, z_hi);
        let neg = ComponentGrad {
            value: normal::log_sigmoid(-self.eta) + v0,
            d_eta: -phi - (a0 + b0) * inv_delta,
            d_delta: a0 * dzlo_dd + b0 * dzhi_dd,
            d_lt_lo: a0 * inv_delta,
            d_lt_hi: b0 * inv_delta,
        };

        let (v1, a1, b1) = normal::log_diff_cdf_grad(z_lo - delta, z_hi - delta);
        let pos = ComponentGrad {
            value: normal::log_sigmoid(self.eta) + v1,
            d_eta: (1.0 - phi) - (a1 + b1) * inv_delta,
            // z - delta shifts the delta-derivative by -1 for finite bounds
            d_delta: a1 * (dzlo_dd - 1.0) + b1 * (dzhi_dd - 1.0),
            d_lt_lo: a1 * inv_delta,
            d_lt_hi: b1 * inv_delta,
        };
        (neg, pos)
    }
}

/// One draw of the oracle's generative story.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDraw {
    pub p: f64,
    pub y: bool,
}

/// Monte-Carlo draws `(p, y)` from the discriminant generative story.
///
/// Deterministic in `seed`. Test oracle: it shares nothing with the
/// closed-form path except `g`'s definition.
pub fn mc_oracle(params: &RiskDistributionParams, n: usize, seed: u64) -> Vec<OracleDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let RiskDistributionParams { phi, delta } = *params;
    (0..n)
        .map(|_| {
            let y = rng.gen::<f64>() < phi;
            let noise: f64 = rng.sample(StandardNormal);
            let x = if y { delta + noise } else { noise };
            OracleDraw { p: g(x, params), y }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(phi: f64, delta: f64) -> RiskDistributionParams {
        RiskDistributionParams::new(phi, delta).unwrap()
    }

    #[test]
    fn g_examples() {
        assert!((g(1.0, &rp(0.3, 2.0)) - 0.3).abs() < 1e-15);
        // 1 / (1 + e^{0.5}) to 20 digits
        assert!((g(0.0, &rp(0.5, 1.0)) - 0.377_540_668_798_145_44).abs() < 1e-15);
        assert!((g(1e3, &rp(0.2, 1.0)) - 1.0).abs() < 1e-15);
        assert!(g(-1e3, &rp(0.2, 1.0)) < 1e-15);
    }

    #[test]
    fn g_inverse_examples() {
        assert!((g_inverse(0.3, &rp(0.3, 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((g_inverse(0.5, &rp(0.5, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            g_inverse(0.0, &rp(0.5, 1.0)),
            Err(FunnelError::Domain(_))
        ));
        assert!(g_inverse(1.0, &rp(0.5, 1.0)).is_err());
    }

    #[test]
    fn boundary_probabilities() {
        let p = rp(0.4, 1.3);
        assert_eq!(tail_prob(0.0, &p), 1.0);
        assert_eq!(tail_prob(1.0, &p), 0.0);
        assert!((interval_prob(0.0, 1.0, &p).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(interval_prob(0.3, 0.3, &p).unwrap(), 0.0);
        assert!(interval_prob(0.5, 0.3, &p).is_err());
        assert!((cond_mean_above(0.0, &p).unwrap() - 0.4).abs() < 1e-15);
        assert!((cond_mean_interval(0.0, 1.0, &p).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn tail_prob_symmetric_case() {
        // φ = 0.5, δ = 1, t = 0.5: g⁻¹ = 0.5 and the two class CDFs are mirror images
        assert!((tail_prob(0.5, &rp(0.5, 1.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_conditioning_is_an_error() {
        let p = rp(1e-6, 8.0);
        match cond_mean_interval(0.999_999_999_999, 1.0, &rp(0.001, 1e-4)) {
            Err(FunnelError::ConditioningDegenerate { .. }) => {}
            other => panic!("expected degenerate conditioning, got {other:?}"),
        }
        assert!(cond_mean_above(1e-12, &p).is_ok());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(RiskDistributionParams::new(0.0, 1.0).is_err());
        assert!(RiskDistributionParams::new(0.5, 0.0).is_err());
        assert!(RiskDistributionParams::new(0.5, f64::INFINITY).is_err());
        assert!(RiskDistributionParams::new(0.5, DELTA_MIN).is_ok());
    }

    #[test]
    fn oracle_is_deterministic() {
        let p = rp(0.3, 1.0);
        assert_eq!(mc_oracle(&p, 100, 7), mc_oracle(&p, 100, 7));
        assert_ne!(mc_oracle(&p, 100, 7), mc_oracle(&p, 100, 8));
    }

    #[test]
    fn interval_gradient_matches_finite_differences() {
        let stage = StageRisk { eta: -0.7, delta: 1.4 };
        let (lt_lo, lt_hi) = (-2.0, 0.3);
        let h = 1e-6;
        let (neg, pos) = stage.interval_grad(lt_lo, lt_hi);
        let eval = |s: StageRisk, lo: f64, hi: f64| {
            let m = s.interval(lo, hi);
            (m.log_neg, m.log_pos)
        };
        let fd = |f: &dyn Fn(f64) -> (f64, f64)| {
            let (a0, a1) = f(h);
            let (b0, b1) = f(-h);
            ((a0 - b0) / (2.0 * h), (a1 - b1) / (2.0 * h))
        };
        let d_eta = fd(&|e| eval(StageRisk { eta: stage.eta + e, ..stage }, lt_lo, lt_hi));
        let d_delta = fd(&|e| eval(StageRisk { delta: stage.delta + e, ..stage }, lt_lo, lt_hi));
        let d_lo = fd(&|e| eval(stage, lt_lo + e, lt_hi));
        let d_hi = fd(&|e| eval(stage, lt_lo, lt_hi + e));
        let close = |a: f64, b: f64| (a - b).abs() < 1e-7 * (1.0 + b.abs());
        assert!(close(neg.d_eta, d_eta.0) && close(pos.d_eta, d_eta.1));
        assert!(close(neg.d_delta, d_delta.0) && close(pos.d_delta, d_delta.1));
        assert!(close(neg.d_lt_lo, d_lo.0) && close(pos.d_lt_lo, d_lo.1));
        assert!(close(neg.d_lt_hi, d_hi.0) && close(pos.d_lt_hi, d_hi.1));
    }
}
