//! The funnel generative model.
//!
//! At each visited stage `k` the decision-maker draws a risk
//! `p ~ R(φ_k, δ_k)` with `φ_k = sigmoid(α + Σ_{j ∈ mask_k} β_j x_j)` and
//! sends the patient to the disposition whose threshold interval contains
//! `p`. The outcome is observed once the patient reaches the observation
//! stage and is modelled as Bernoulli with the mean of `Y` conditional on
//! the final decision's interval.

pub mod config;
pub mod likelihood;
pub mod params;
pub mod posterior;
pub mod record;

pub use config::{FunnelConfig, PriorSpec};
pub use likelihood::PreparedData;
pub use params::ModelParams;
pub use posterior::{grad_log_posterior, log_prior, total_log_posterior, FunnelPosterior};
pub use record::{Disposition, Pathway, PatientRecord, StageDecision};

use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::riskdist::normal::sigmoid;
use crate::riskdist::{threshold_logit, StageRisk};

fn linear_predictor(
    features: &[Option<f64>],
    stage: usize,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<f64> {
    let mut eta = params.alpha;
    for (j, &on) in config.mask(stage).iter().enumerate() {
        if on {
            let x = features[j].ok_or_else(|| FunnelError::MissingFeature {
                feature: config.feature_names[j].clone(),
                stage,
            })?;
            eta += params.beta[j] * x;
        }
    }
    Ok(eta)
}

fn stage_risk(
    features: &[Option<f64>],
    stage: usize,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<StageRisk> {
    Ok(StageRisk {
        eta: linear_predictor(features, stage, params, config)?,
        delta: params.deltas[stage.min(config.n_decision_stages()) - 1],
    })
}

fn check_stage(stage: usize, upto: usize) -> Result<()> {
    if stage == 0 || stage > upto {
        return Err(FunnelError::Domain(format!(
            "stage {stage} outside 1..={upto}"
        )));
    }
    Ok(())
}

/// Mean φ of the risk distribution at `stage`.
pub fn stage_mean(
    record: &PatientRecord,
    stage: usize,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<f64> {
    check_stage(stage, config.n_stages)?;
    Ok(sigmoid(linear_predictor(&record.features, stage, params, config)?))
}

/// Probability of each disposition at `stage`, ordered as
/// [`Disposition::options`]: discharge first, then stages `stage+1..=K`.
pub fn decision_probs(
    record: &PatientRecord,
    stage: usize,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<Vec<f64>> {
    check_stage(stage, config.n_decision_stages())?;
    decision_probs_for(&record.features, stage, params, config)
}

fn decision_probs_for(
    features: &[Option<f64>],
    stage: usize,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<Vec<f64>> {
    let risk = stage_risk(features, stage, params, config)?;
    Ok(Disposition::options(stage, config.n_stages)
        .into_iter()
        .map(|d| interval_mass(&risk, d, stage, params, config).prob())
        .collect())
}

fn interval_mass(
    risk: &StageRisk,
    disposition: Disposition,
    stage: usize,
    params: &ModelParams,
    config: &FunnelConfig,
) -> crate::riskdist::IntervalMass {
    let (lo, hi) = disposition.interval(stage, config.n_stages);
    let lt_lo = lo.map_or(f64::NEG_INFINITY, |k| threshold_logit(params.thresholds[k]));
    let lt_hi = hi.map_or(f64::INFINITY, |k| threshold_logit(params.thresholds[k]));
    risk.interval(lt_lo, lt_hi)
}

/// Log-likelihood of one patient's decisions and (if observed) outcome.
///
/// Returns `-inf` when a realized interval has vanishing probability.
pub fn pathway_loglik(
    record: &PatientRecord,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<f64> {
    record.validate(config)?;
    let pathway = record.pathway();
    let last = pathway.0.len() - 1;
    let mut total = 0.0;
    for (n, d) in pathway.0.iter().enumerate() {
        let risk = stage_risk(&record.features, d.stage, params, config)?;
        let mass = interval_mass(&risk, d.disposition, d.stage, params, config);
        total += match (n == last, record.outcome) {
            (true, Some(true)) => mass.log_pos,
            (true, Some(false)) => mass.log_neg,
            _ => mass.log_prob(),
        };
    }
    Ok(if total.is_nan() { f64::NEG_INFINITY } else { total })
}

/// Disposition probabilities at one visited stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRates {
    pub stage: usize,
    pub dispositions: Vec<Disposition>,
    pub probs: Vec<f64>,
}

/// Model-implied rates for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    /// Admit rates at each visited stage.
    pub stage_rates: Vec<StageRates>,
    /// Mortality probability: the mean of `Y` conditional on the realized
    /// terminal interval, or φ at the deepest stage when no decision is
    /// recorded.
    pub mortality: f64,
}

pub fn predict_rates(
    record: &PatientRecord,
    params: &ModelParams,
    config: &FunnelConfig,
) -> Result<RatePrediction> {
    let pathway = record.pathway();
    let mut stage_rates = Vec::with_capacity(pathway.0.len());
    for d in &pathway.0 {
        stage_rates.push(StageRates {
            stage: d.stage,
            dispositions: Disposition::options(d.stage, config.n_stages),
            probs: decision_probs_for(&record.features, d.stage, params, config)?,
        });
    }
    let mortality = match pathway.0.last() {
        Some(d) => {
            let risk = stage_risk(&record.features, d.stage, params, config)?;
            match interval_mass(&risk, d.disposition, d.stage, params, config).cond_mean() {
                Ok(q) => q.clamp(0.0, 1.0),
                Err(FunnelError::ConditioningDegenerate { .. }) => risk.phi(),
                Err(e) => return Err(e),
            }
        }
        None => marginal_mortality(&record.features, params, config),
    };
    Ok(RatePrediction {
        stage_rates,
        mortality,
    })
}

/// φ at the deepest stage whose features are all present.
pub fn marginal_mortality(
    features: &[Option<f64>],
    params: &ModelParams,
    config: &FunnelConfig,
) -> f64 {
    let stage = (1..=config.n_stages)
        .rev()
        .find(|&s| linear_predictor(features, s, params, config).is_ok())
        .unwrap_or(1);
    let eta = params.alpha
        + config
            .mask(stage)
            .iter()
            .zip(features)
            .zip(&params.beta)
            .filter(|((on, _), _)| **on)
            .map(|((_, x), b)| b * x.unwrap_or(0.0))
            .sum::<f64>();
    sigmoid(eta)
}

/// Model probability of a complete pathway given covariates. Features the
/// pathway needs but that are absent count as zero (the z-scored mean).
pub fn pathway_probability(
    features: &[Option<f64>],
    pathway: &Pathway,
    params: &ModelParams,
    config: &FunnelConfig,
) -> f64 {
    let filled: Vec<Option<f64>> = features.iter().map(|x| Some(x.unwrap_or(0.0))).collect();
    pathway
        .0
        .iter()
        .map(|d| {
            let risk = stage_risk(&filled, d.stage, params, config).expect("filled features");
            interval_mass(&risk, d.disposition, d.stage, params, config).prob()
        })
        .product()
}

/// Probability of eventually reaching the final stage.
pub fn final_stage_probability(
    features: &[Option<f64>],
    params: &ModelParams,
    config: &FunnelConfig,
) -> f64 {
    let k = config.n_stages;
    Pathway::enumerate(k)
        .iter()
        .filter(|p| p.deepest_stage(k) == k)
        .map(|p| pathway_probability(features, p, params, config))
        .sum::<f64>()
        // summing pathway products can overshoot by an ulp
        .clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> FunnelConfig {
        FunnelConfig::three_stage(4)
    }

    fn params() -> ModelParams {
        ModelParams {
            alpha: -0.4,
            beta: vec![0.8, -0.5, 0.3, 1.1],
            thresholds: vec![0.2, 0.55],
            deltas: vec![0.9, 1.4],
        }
    }

    fn record(decisions: Vec<Option<Disposition>>, outcome: Option<bool>) -> PatientRecord {
        PatientRecord::new(
            "p",
            vec![Some(0.3), Some(-1.2), Some(0.7), Some(0.1)],
            decisions,
            outcome,
        )
    }

    #[test]
    fn stage_mean_examples() {
        let c = config();
        let zero = PatientRecord::new("z", vec![Some(0.0); 4], vec![None, None], None);
        let mut p = params();
        assert!((stage_mean(&zero, 1, &p, &c).unwrap() - sigmoid(-0.4)).abs() < 1e-15);
        p.alpha = -5.0;
        p.beta = vec![0.0; 4];
        // sigmoid(-5)
        assert!((stage_mean(&zero, 2, &p, &c).unwrap() - 0.006_692_850_924_284_856).abs() < 1e-15);
        p.alpha = 0.0;
        p.beta = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(stage_mean(&zero, 1, &p, &c).unwrap(), 0.5);
    }

    #[test]
    fn masked_features_are_ignored_at_stage_one() {
        let c = config();
        let p = params();
        let mut r = record(vec![Some(Disposition::Discharge), None], None);
        let before = stage_mean(&r, 1, &p, &c).unwrap();
        r.features[3] = Some(100.0);
        assert_eq!(stage_mean(&r, 1, &p, &c).unwrap(), before);
        r.features[3] = None;
        assert!(matches!(
            stage_mean(&r, 2, &p, &c),
            Err(FunnelError::MissingFeature { stage: 2, .. })
        ));
    }

    #[test]
    fn decision_probs_sum_to_one() {
        let c = config();
        let p = params();
        let r = record(vec![None, None], None);
        for stage in 1..=2 {
            let probs = decision_probs(&r, stage, &p, &c).unwrap();
            assert_eq!(probs.len(), 4 - stage);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(decision_probs(&r, 3, &p, &c).is_err());
    }

    #[test]
    fn discharge_vanishes_as_first_threshold_shrinks() {
        let c = config();
        let mut p = params();
        let r = record(vec![None, None], None);
        p.thresholds[0] = 1e-12;
        assert!(decision_probs(&r, 1, &p, &c).unwrap()[0] < 1e-6);
    }

    #[test]
    fn ed_discharge_uses_only_admit_rate() {
        let c = config();
        let p = params();
        let r = record(vec![Some(Disposition::Discharge), None], None);
        let expected = decision_probs(&r, 1, &p, &c).unwrap()[0].ln();
        assert!((pathway_loglik(&r, &p, &c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn direct_to_final_stage_with_death() {
        let c = config();
        let p = params();
        let r = record(vec![Some(Disposition::Admit(3)), None], Some(true));
        let phi = stage_mean(&r, 1, &p, &c).unwrap();
        let rp = crate::riskdist::RiskDistributionParams::new(phi, p.deltas[0]).unwrap();
        let expected = crate::riskdist::tail_prob(p.thresholds[1], &rp).ln()
            + crate::riskdist::cond_mean_above(p.thresholds[1], &rp).unwrap().ln();
        assert!((pathway_loglik(&r, &p, &c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn predict_rates_share_decision_probs() {
        let c = config();
        let p = params();
        let r = record(
            vec![Some(Disposition::Admit(2)), Some(Disposition::Discharge)],
            Some(false),
        );
        let rates = predict_rates(&r, &p, &c).unwrap();
        assert_eq!(rates.stage_rates.len(), 2);
        assert_eq!(rates.stage_rates[0].probs, decision_probs(&r, 1, &p, &c).unwrap());
        assert_eq!(rates.stage_rates[1].probs, decision_probs(&r, 2, &p, &c).unwrap());
        let phi2 = stage_mean(&r, 2, &p, &c).unwrap();
        let rp = crate::riskdist::RiskDistributionParams::new(phi2, p.deltas[1]).unwrap();
        let q = crate::riskdist::cond_mean_interval(0.0, p.thresholds[1], &rp).unwrap();
        assert!((rates.mortality - q).abs() < 1e-12);
    }

    #[test]
    fn final_stage_probability_matches_pathways() {
        let c = config();
        let p = params();
        let r = record(vec![None, None], None);
        let total: f64 = Pathway::enumerate(3)
            .iter()
            .map(|path| pathway_probability(&r.features, path, &p, &c))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        let d1 = decision_probs(&r, 1, &p, &c).unwrap();
        let d2 = decision_probs(&r, 2, &p, &c).unwrap();
        let expected = d1[2] + d1[1] * d2[1];
        assert!((final_stage_probability(&r.features, &p, &c) - expected).abs() < 1e-12);
    }
}
