//! Synthetic funnel data with known ground truth.
//!
//! Each patient gets iid standard-normal features. At every visited stage a
//! risk draw is taken from `R(φ_k, δ_k)` using the features visible there and
//! the categorical threshold rule picks the next disposition. The outcome is
//! drawn as `Bern(p)` from the last risk draw and censored when the patient
//! never reaches the observation stage.
//!
//! Patient `i` uses its own ChaCha stream (`i + 1`) of the dataset seed, so
//! output does not depend on generation order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::model::{Disposition, FunnelConfig, ModelParams, Pathway, PatientRecord, StageDecision};
use crate::riskdist::normal::{logit, sigmoid};
use crate::riskdist::DELTA_MIN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_patients: usize,
    pub config: FunnelConfig,
    pub min_per_pathway: usize,
    pub seed: u64,
    /// Allow a decision to skip intermediate stages.
    pub allow_skips: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            n_patients: 50_000,
            config: FunnelConfig::three_stage(6),
            min_per_pathway: 10,
            seed: 0,
            allow_skips: true,
        }
    }
}

impl SimulationSpec {
    pub fn n_features(&self) -> usize {
        self.config.n_features()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.n_patients == 0 {
            return Err(FunnelError::InvalidConfig("n_patients must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters a dataset was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: ModelParams,
    pub seed: u64,
}

/// A simulated dataset plus what the simulator withholds from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    /// Censored records as a decision-maker would log them.
    pub records: Vec<PatientRecord>,
    /// Every feature for every patient.
    pub full_features: Vec<Vec<f64>>,
    /// Uncensored outcome for every patient.
    pub full_outcomes: Vec<bool>,
}

impl SimulatedData {
    /// Splits into the first `n` patients and the rest.
    pub fn split_at(&self, n: usize) -> (SimulatedData, SimulatedData) {
        let n = n.min(self.records.len());
        let part = |r: std::ops::Range<usize>| SimulatedData {
            records: self.records[r.clone()].to_vec(),
            full_features: self.full_features[r.clone()].to_vec(),
            full_outcomes: self.full_outcomes[r].to_vec(),
        };
        (part(0..n), part(n..self.records.len()))
    }
}

fn half_normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (z * sd).abs()
}

/// Draws `α, β ~ N(0,1)`, `t_1 ~ U(0, 0.5)`, `t_k = t_{k−1} + U(0, 0.5)`
/// (kept below 1), `δ_k ~ HalfNormal(0, 0.5)` floored at `DELTA_MIN`.
pub fn sample_ground_truth(spec: &SimulationSpec, seed: u64) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.n_features();
    let stages = spec.config.n_decision_stages();
    let alpha: f64 = rng.sample(StandardNormal);
    let beta: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let mut thresholds = Vec::with_capacity(stages);
    for k in 0..stages {
        let u = rng.gen_range(0.0..0.5);
        let t: f64 = if k == 0 { u } else { thresholds[k - 1] + u };
        // leave room above for any later thresholds
        let cap = 1.0 - 1e-6 * (stages - k) as f64;
        let prev = if k == 0 { 0.0 } else { thresholds[k - 1] };
        thresholds.push(t.min(cap).max(prev + 1e-9).max(f64::MIN_POSITIVE));
    }
    let deltas = (0..stages)
        .map(|_| half_normal(&mut rng, 0.5).max(DELTA_MIN))
        .collect();
    GroundTruth {
        params: ModelParams {
            alpha,
            beta,
            thresholds,
            deltas,
        },
        seed,
    }
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates `spec.n_patients` patients from `truth`.
pub fn simulate_dataset(truth: &GroundTruth, spec: &SimulationSpec) -> Result<SimulatedData> {
    spec.validate()?;
    truth.params.validate(&spec.config)?;
    let config = &spec.config;
    let params = &truth.params;
    let k = config.n_stages;
    let p = config.n_features();
    let threshold_logits: Vec<f64> = params.thresholds.iter().map(|&t| logit(t)).collect();
    let columns: Vec<Vec<usize>> = (1..=k).map(|s| config.stage_columns(s)).collect();

    let patients: Vec<(PatientRecord, Vec<f64>, bool)> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| {
            let mut rng = patient_rng(spec.seed, i);
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let mut decisions = Vec::new();
            let mut stage = 1;
            let last_logit = loop {
                let eta = params.alpha + columns[stage - 1].iter().map(|&j| params.beta[j] * x[j]).sum::<f64>();
                let delta = params.deltas[stage - 1];
                let latent = rng.gen::<f64>() < sigmoid(eta);
                let noise: f64 = rng.sample(StandardNormal);
                let signal = if latent { delta + noise } else { noise };
                // logit g(x) = logit φ + δx − δ²/2
                let risk_logit = eta + delta * signal - 0.5 * delta * delta;
                let exceeded = threshold_logits[stage - 1..]
                    .iter()
                    .take_while(|&&lt| risk_logit >= lt)
                    .count();
                let disposition = match exceeded {
                    0 => Disposition::Discharge,
                    _ if !spec.allow_skips => Disposition::Admit(stage + 1),
                    n => Disposition::Admit(stage + n),
                };
                decisions.push(StageDecision { stage, disposition });
                match disposition {
                    Disposition::Admit(m) if m < k => stage = m,
                    _ => break risk_logit,
                }
            };
            let outcome = rng.gen::<f64>() < sigmoid(last_logit);
            let record = PatientRecord::from_pathway(
                format!("{i}"),
                &x,
                &Pathway(decisions),
                outcome,
                config,
            );
            (record, x, outcome)
        })
        .collect();

    let mut data = SimulatedData {
        records: Vec::with_capacity(spec.n_patients),
        full_features: Vec::with_capacity(spec.n_patients),
        full_outcomes: Vec::with_capacity(spec.n_patients),
    };
    for (record, x, y) in patients {
        data.records.push(record);
        data.full_features.push(x);
        data.full_outcomes.push(y);
    }
    Ok(data)
}

/// Per-pathway patient counts and the acceptance decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationCheck {
    pub accepted: bool,
    /// Pathway label → number of patients.
    pub counts: BTreeMap<String, usize>,
}

/// Accepts iff every possible pathway has at least `min_per_pathway`
/// patients.
pub fn validate_simulation(records: &[PatientRecord], spec: &SimulationSpec) -> SimulationCheck {
    let mut counts: BTreeMap<String, usize> = Pathway::enumerate(spec.config.n_stages)
        .iter()
        .map(|p| (p.label(), 0))
        .collect();
    for r in records {
        *counts.entry(r.pathway().label()).or_default() += 1;
    }
    SimulationCheck {
        accepted: counts.values().all(|&c| c >= spec.min_per_pathway),
        counts,
    }
}

/// Outcome of [`simulate_until_valid`].
#[derive(Debug, Clone)]
pub struct AcceptedSimulation {
    pub truth: GroundTruth,
    pub data: SimulatedData,
    pub check: SimulationCheck,
    /// Attempts used, including the accepted one.
    pub attempts: usize,
}

/// Seed used by attempt `attempt` (0-based) of [`simulate_until_valid`].
pub fn attempt_seed(base: u64, attempt: usize) -> u64 {
    base.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Resamples ground truth until the generated dataset passes
/// [`validate_simulation`]. Attempt `a` uses [`attempt_seed`] for both the
/// ground truth and the patients.
pub fn simulate_until_valid(
    spec: &SimulationSpec,
    max_attempts: usize,
) -> std::result::Result<AcceptedSimulation, SimulationCheck> {
    let mut last = None;
    for attempt in 0..max_attempts {
        let seed = attempt_seed(spec.seed, attempt);
        let truth = sample_ground_truth(spec, seed);
        let attempt_spec = SimulationSpec {
            seed,
            ..spec.clone()
        };
        let data = simulate_dataset(&truth, &attempt_spec).expect("valid spec and truth");
        let check = validate_simulation(&data.records, spec);
        if check.accepted {
            return Ok(AcceptedSimulation {
                truth,
                data,
                check,
                attempts: attempt + 1,
            });
        }
        last = Some(check);
    }
    Err(last.unwrap_or(SimulationCheck {
        accepted: false,
        counts: BTreeMap::new(),
    }))
}
